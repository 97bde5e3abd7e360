use joinrl::agents::ppo::clipped_objective;
use joinrl::agents::replay::SumTree;
use joinrl::catalog::{generate_synthetic_catalog, Catalog, LookupTable};
use joinrl::env::ActionSpace;
use joinrl::experiment::build_lookup_table;
use joinrl::workload::{generate_synthetic_workload, SchemaGraph};
use joinrl::{cost, reward_from_cost, BoundQuery, CardinalityProvider, CostParams, EnvConfig, JoinEnv};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

proptest! {
    #[test]
    fn action_index_is_a_bijection(n in 2usize..24) {
        let space = ActionSpace::new(n);
        let mut seen = vec![false; space.size()];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let a = space.index(i, j).unwrap();
                prop_assert!(!seen[a]);
                seen[a] = true;
                prop_assert_eq!(space.pair(a).unwrap(), (i, j));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert!(space.pair(space.size()).is_err());
    }

    #[test]
    fn reward_is_bounded_and_monotone(a in 0.0f64..1e15, b in 0.0f64..1e15) {
        let params = CostParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = reward_from_cost(lo, &params).unwrap();
        let r_hi = reward_from_cost(hi, &params).unwrap();
        prop_assert!(r_hi <= r_lo);
        prop_assert!((params.min_reward..=0.0).contains(&r_lo));
        prop_assert!((params.min_reward..=0.0).contains(&r_hi));
    }

    #[test]
    fn clipped_objective_never_exceeds_the_unclipped_one(
        ratio in 0.0f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.9,
    ) {
        let obj = clipped_objective(ratio, adv, eps);
        prop_assert!(obj <= ratio * adv + 1e-12);
        prop_assert!(obj <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv + 1e-12);
    }

    #[test]
    fn sum_tree_tracks_leaf_totals(
        writes in prop::collection::vec((0usize..37, 0.0f64..100.0), 1..200),
        probe in 0.0f64..1.0,
    ) {
        let mut tree = SumTree::new(37);
        let mut leaves = [0.0; 37];
        for (slot, value) in writes {
            tree.set(slot, value);
            leaves[slot] = value;
        }
        let total: f64 = leaves.iter().sum();
        prop_assert!((tree.total() - total).abs() <= 1e-9 * total.max(1.0));
        if total > 0.0 {
            let slot = tree.find(probe * tree.total());
            prop_assert!(slot < 37);
            prop_assert!(leaves[slot] > 0.0);
        }
    }

    #[test]
    fn random_episodes_build_complete_plans(seed in 0u64..500) {
        let catalog = generate_synthetic_catalog(7, seed).unwrap();
        let graph = SchemaGraph::from_naming(&catalog);
        let workload = generate_synthetic_workload(&catalog, &graph, 3, 2, 7, seed).unwrap();
        let provider = CardinalityProvider::Estimated;
        let params = CostParams::default();
        let mut env = JoinEnv::new(&catalog, &provider, EnvConfig::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for q in &workload.queries {
            let mut out = env.reset(q).unwrap();
            let mut steps = 0;
            while !out.done {
                prop_assert_eq!(out.reward, 0.0);
                let valid: Vec<usize> = out.mask.valid_actions().collect();
                out = env.step(*valid.choose(&mut rng).unwrap()).unwrap();
                steps += 1;
            }
            prop_assert_eq!(steps, q.relation_count() - 1);
            let plan = env.final_plan().unwrap().clone();
            let bq = BoundQuery::new(q, &catalog, &provider).unwrap();
            let c = cost(&plan, &bq, &params).unwrap();
            prop_assert_eq!(env.state().unwrap().final_cost(), Some(c));
            prop_assert_eq!(out.reward, reward_from_cost(c, &params).unwrap());
        }
    }

    #[test]
    fn files_round_trip(seed in 0u64..200, sigma in 0.0f64..2.0) {
        let catalog = generate_synthetic_catalog(6, seed).unwrap();
        prop_assert_eq!(&Catalog::from_json_str(&catalog.to_json_string()).unwrap(), &catalog);
        let graph = SchemaGraph::from_naming(&catalog);
        let workload = generate_synthetic_workload(&catalog, &graph, 4, 2, 5, seed).unwrap();
        let again = joinrl::Workload::from_json_str(&workload.to_json_string(), &catalog).unwrap();
        prop_assert_eq!(again, workload.clone());
        let table = build_lookup_table(&catalog, &workload.queries, sigma, seed).unwrap();
        prop_assert_eq!(LookupTable::parse(&table.to_text()).unwrap(), table);
    }
}
