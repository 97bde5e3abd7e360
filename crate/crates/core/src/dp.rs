//! Classical plan enumeration: System-R style left-deep dynamic programming and
//! exhaustive oracles over the left-deep and bushy plan spaces.
//!
//! Cross products follow one rule everywhere in this module (except the bushy
//! oracle, which covers the full plan space): a relation may be appended to a
//! prefix without a connecting predicate only when no remaining relation is
//! connected to the prefix. Under that rule the DP is exact within the
//! left-deep space, which the exhaustive oracle checks.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::plancost::{CostEvaluator, CostParams, JoinAlgorithm, PlanNode, SubplanStats};
use crate::workload::{BoundQuery, RelSet};

/// Outcome of one enumeration run.
#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    pub plan: PlanNode,
    pub cost: f64,
    /// Number of sub-plan (or full-plan, for the oracles) evaluations.
    pub expanded_states: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpOptions {
    /// Permit cross products anywhere, not only when forced.
    pub allow_cross: bool,
    pub max_relations: usize,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            allow_cross: false,
            max_relations: 16,
        }
    }
}

pub const EXHAUSTIVE_LEFT_DEEP_LIMIT: usize = 8;
pub const EXHAUSTIVE_BUSHY_LIMIT: usize = 7;

/// Query relations sorted by name, with their catalog positions.
struct Relations {
    names: Vec<String>,
    positions: Vec<usize>,
}

impl Relations {
    fn new(bq: &BoundQuery<'_>) -> Result<Self> {
        let mut names = bq.query.relations.clone();
        names.sort();
        let positions = names
            .iter()
            .map(|n| bq.position(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { names, positions })
    }

    fn len(&self) -> usize {
        self.names.len()
    }

    fn catalog_set(&self, local: u32) -> RelSet {
        let mut set = RelSet::EMPTY;
        for (i, &pos) in self.positions.iter().enumerate() {
            if local >> i & 1 == 1 {
                set = set.union(RelSet::single(pos));
            }
        }
        set
    }
}

/// Whether appending local relation `next` to `prefix` respects the cross-product rule.
fn admissible(
    bq: &BoundQuery<'_>,
    rels: &Relations,
    prefix: u32,
    next: usize,
    allow_cross: bool,
) -> bool {
    if allow_cross {
        return true;
    }
    let prefix_set = rels.catalog_set(prefix);
    if bq.connected(prefix_set, RelSet::single(rels.positions[next])) {
        return true;
    }
    // Forced cross product: nothing outside the prefix connects to it.
    let full = (1u32 << rels.len()) - 1;
    let outside = rels.catalog_set(full & !prefix);
    !bq.connected(prefix_set, outside)
}

#[derive(Clone, Copy)]
struct Entry {
    stats: SubplanStats,
    /// Previous prefix and the algorithm used to append the last relation.
    back: Option<(u32, usize, JoinAlgorithm)>,
}

/// Minimum-cost left-deep plan by bottom-up dynamic programming over relation subsets.
pub fn dp_left_deep(
    bq: &BoundQuery<'_>,
    params: &CostParams,
    options: DpOptions,
) -> Result<DpResult> {
    let started = Instant::now();
    let rels = Relations::new(bq)?;
    let k = rels.len();
    if k > options.max_relations || k > 31 {
        return Err(Error::TooManyRelations {
            count: k,
            limit: options.max_relations.min(31),
        });
    }
    let mut eval = CostEvaluator::new(bq, *params);
    let full = (1u32 << k) - 1;
    let mut best: Vec<Option<Entry>> = vec![None; 1 << k];
    let mut expanded = 0u64;
    for (i, &pos) in rels.positions.iter().enumerate() {
        best[1 << i] = Some(Entry {
            stats: eval.base(pos)?,
            back: None,
        });
    }
    let singles: Vec<SubplanStats> = rels
        .positions
        .iter()
        .map(|&p| eval.base(p))
        .collect::<Result<_>>()?;

    for target in 1..=full {
        if target.count_ones() < 2 {
            continue;
        }
        let mut winner: Option<Entry> = None;
        for last in 0..k {
            if target >> last & 1 == 0 {
                continue;
            }
            let prefix = target & !(1 << last);
            let Some(prev) = best[prefix as usize] else {
                continue;
            };
            if !admissible(bq, &rels, prefix, last, options.allow_cross) {
                continue;
            }
            expanded += 1;
            let (alg, stats) = eval.best_join(&prev.stats, &singles[last])?;
            if winner.is_none_or(|w| stats.cost < w.stats.cost) {
                winner = Some(Entry {
                    stats,
                    back: Some((prefix, last, alg)),
                });
            }
        }
        best[target as usize] = winner;
    }

    let top = best[full as usize].ok_or_else(|| {
        Error::Infeasible(format!("no admissible left-deep plan for `{}`", bq.query.id))
    })?;
    let plan = rebuild(&best, &rels, full);
    Ok(DpResult {
        plan,
        cost: top.stats.cost,
        expanded_states: expanded,
        elapsed: started.elapsed(),
    })
}

fn rebuild(best: &[Option<Entry>], rels: &Relations, set: u32) -> PlanNode {
    let entry = best[set as usize].expect("reachable");
    match entry.back {
        None => PlanNode::leaf(&rels.names[set.trailing_zeros() as usize]),
        Some((prefix, last, alg)) => PlanNode::join(
            rebuild(best, rels, prefix),
            PlanNode::leaf(&rels.names[last]),
            alg,
        ),
    }
}

/// Lexicographic next permutation; false once the last permutation is passed.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Enumerates all `k!` join orders as left-deep trees (best algorithm per
/// join) and returns the cheapest admissible one. `expanded_states` counts
/// the permutations enumerated.
pub fn exhaustive_left_deep(bq: &BoundQuery<'_>, params: &CostParams) -> Result<DpResult> {
    let started = Instant::now();
    let rels = Relations::new(bq)?;
    let k = rels.len();
    if k > EXHAUSTIVE_LEFT_DEEP_LIMIT {
        return Err(Error::TooManyRelations {
            count: k,
            limit: EXHAUSTIVE_LEFT_DEEP_LIMIT,
        });
    }
    let mut eval = CostEvaluator::new(bq, *params);
    let singles: Vec<SubplanStats> = rels
        .positions
        .iter()
        .map(|&p| eval.base(p))
        .collect::<Result<_>>()?;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut enumerated = 0u64;
    let mut best: Option<(f64, Vec<usize>, Vec<JoinAlgorithm>)> = None;
    loop {
        enumerated += 1;
        let mut prefix = 1u32 << perm[0];
        let mut stats = singles[perm[0]];
        let mut algs = Vec::with_capacity(k.saturating_sub(1));
        let mut ok = true;
        for &next in &perm[1..] {
            if !admissible(bq, &rels, prefix, next, false) {
                ok = false;
                break;
            }
            let (alg, joined) = eval.best_join(&stats, &singles[next])?;
            algs.push(alg);
            stats = joined;
            prefix |= 1 << next;
        }
        if ok && best.as_ref().is_none_or(|(c, _, _)| stats.cost < *c) {
            best = Some((stats.cost, perm.clone(), algs));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (cost, order, algs) = best.ok_or_else(|| {
        Error::Infeasible(format!("no admissible left-deep plan for `{}`", bq.query.id))
    })?;
    let mut plan = PlanNode::leaf(&rels.names[order[0]]);
    for (&next, alg) in order[1..].iter().zip(algs) {
        plan = PlanNode::join(plan, PlanNode::leaf(&rels.names[next]), alg);
    }
    Ok(DpResult {
        plan,
        cost,
        expanded_states: enumerated,
        elapsed: started.elapsed(),
    })
}

/// Unlabelled binary tree shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeShape {
    Leaf,
    Node(Box<TreeShape>, Box<TreeShape>),
}

impl TreeShape {
    pub fn leaves(&self) -> usize {
        match self {
            TreeShape::Leaf => 1,
            TreeShape::Node(l, r) => l.leaves() + r.leaves(),
        }
    }
}

/// All binary tree shapes with `joins` internal nodes.
pub fn enumerate_tree_shapes(joins: usize) -> Vec<TreeShape> {
    let mut table: Vec<Vec<TreeShape>> = vec![vec![TreeShape::Leaf]];
    for j in 1..=joins {
        let mut shapes = Vec::new();
        for left in 0..j {
            let right = j - 1 - left;
            for l in &table[left] {
                for r in &table[right] {
                    shapes.push(TreeShape::Node(Box::new(l.clone()), Box::new(r.clone())));
                }
            }
        }
        table.push(shapes);
    }
    table.swap_remove(joins)
}

/// Number of binary tree shapes with `joins` internal nodes, `(2j)! / (j! (j+1)!)`.
pub fn count_tree_shapes(joins: u32) -> Result<u64> {
    if joins == 0 {
        return Err(Error::Config("tree shapes are counted for at least one join".into()));
    }
    if joins > 30 {
        return Err(Error::Config(format!(
            "tree-shape count for {joins} joins exceeds the supported range (<= 30)"
        )));
    }
    // C(n+1) = C(n) * 2(2n+1) / (n+2), exact in u128 at every step.
    let mut c: u128 = 1;
    for n in 0..joins as u128 {
        c = c * 2 * (2 * n + 1) / (n + 2);
    }
    Ok(c as u64)
}

fn cost_shape(
    shape: &TreeShape,
    leaves: &[usize],
    singles: &[SubplanStats],
    eval: &mut CostEvaluator<'_, '_>,
) -> Result<SubplanStats> {
    match shape {
        TreeShape::Leaf => Ok(singles[leaves[0]]),
        TreeShape::Node(l, r) => {
            let n = l.leaves();
            let ls = cost_shape(l, &leaves[..n], singles, eval)?;
            let rs = cost_shape(r, &leaves[n..], singles, eval)?;
            Ok(eval.best_join(&ls, &rs)?.1)
        }
    }
}

fn build_shape(
    shape: &TreeShape,
    leaves: &[usize],
    singles: &[SubplanStats],
    names: &[String],
    eval: &mut CostEvaluator<'_, '_>,
) -> Result<(PlanNode, SubplanStats)> {
    match shape {
        TreeShape::Leaf => Ok((PlanNode::leaf(&names[leaves[0]]), singles[leaves[0]])),
        TreeShape::Node(l, r) => {
            let n = l.leaves();
            let (lp, ls) = build_shape(l, &leaves[..n], singles, names, eval)?;
            let (rp, rs) = build_shape(r, &leaves[n..], singles, names, eval)?;
            let (alg, stats) = eval.best_join(&ls, &rs)?;
            Ok((PlanNode::join(lp, rp, alg), stats))
        }
    }
}

/// Enumerates every tree shape times every leaf assignment (the full bushy
/// space, cross products included) and returns the global minimum.
/// `expanded_states` counts the plans costed.
pub fn exhaustive_bushy(bq: &BoundQuery<'_>, params: &CostParams) -> Result<DpResult> {
    let started = Instant::now();
    let rels = Relations::new(bq)?;
    let k = rels.len();
    if k > EXHAUSTIVE_BUSHY_LIMIT {
        return Err(Error::TooManyRelations {
            count: k,
            limit: EXHAUSTIVE_BUSHY_LIMIT,
        });
    }
    let mut eval = CostEvaluator::new(bq, *params);
    let singles: Vec<SubplanStats> = rels
        .positions
        .iter()
        .map(|&p| eval.base(p))
        .collect::<Result<_>>()?;
    let shapes = enumerate_tree_shapes(k - 1);
    let mut evaluated = 0u64;
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for (si, shape) in shapes.iter().enumerate() {
        let mut perm: Vec<usize> = (0..k).collect();
        loop {
            evaluated += 1;
            let stats = cost_shape(shape, &perm, &singles, &mut eval)?;
            if best.as_ref().is_none_or(|(c, _, _)| stats.cost < *c) {
                best = Some((stats.cost, si, perm.clone()));
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }
    let (cost, si, perm) = best.expect("at least one plan");
    let (plan, _) = build_shape(&shapes[si], &perm, &singles, &rels.names, &mut eval)?;
    Ok(DpResult {
        plan,
        cost,
        expanded_states: evaluated,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{
        generate_synthetic_catalog, lookup_key, CardinalityProvider, Catalog, ColumnStats,
        LookupTable, TableStats,
    };
    use crate::fixtures::{running_example_catalog, running_example_query};
    use crate::plancost::cost;
    use crate::workload::{generate_synthetic_workload, JoinQuery, SchemaGraph};

    #[test]
    fn catalan_numbers() {
        let expect = [1u64, 2, 5, 14, 42, 132, 429, 1430, 4862, 16796];
        for (j, &c) in expect.iter().enumerate() {
            assert_eq!(count_tree_shapes(j as u32 + 1).unwrap(), c);
            assert_eq!(enumerate_tree_shapes(j + 1).len() as u64, c);
        }
        assert_eq!(count_tree_shapes(30).unwrap(), 3_814_986_502_092_304);
        assert!(count_tree_shapes(31).is_err());
        assert!(count_tree_shapes(0).is_err());
    }

    #[test]
    fn permutation_counts() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let r = exhaustive_left_deep(&bq, &CostParams::default()).unwrap();
        assert_eq!(r.expanded_states, 24);
        let q3 = JoinQuery::new(
            "q3",
            vec!["P".into(), "OI".into(), "O".into()],
            vec!["P.id = OI.p_id".parse().unwrap(), "OI.o_id = O.id".parse().unwrap()],
            false,
            &cat,
        )
        .unwrap();
        let bq3 = BoundQuery::new(&q3, &cat, &p).unwrap();
        assert_eq!(
            exhaustive_left_deep(&bq3, &CostParams::default()).unwrap().expanded_states,
            6
        );
        let bushy = exhaustive_bushy(&bq, &CostParams::default()).unwrap();
        assert_eq!(bushy.expanded_states, 5 * 24);
    }

    #[test]
    fn two_relation_query_picks_cheaper_order() {
        let cat = running_example_catalog();
        let q = JoinQuery::new(
            "q2",
            vec!["P".into(), "OI".into()],
            vec!["P.id = OI.p_id".parse().unwrap()],
            false,
            &cat,
        )
        .unwrap();
        let p = CardinalityProvider::Estimated;
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let params = CostParams::default();
        let r = dp_left_deep(&bq, &params, DpOptions::default()).unwrap();
        let candidates = ["(P hj OI)", "(OI hj P)", "(P ij OI)", "(OI ij P)"];
        let min = candidates
            .iter()
            .filter_map(|t| cost(&crate::plancost::parse_plan(t).unwrap(), &bq, &params).ok())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.cost, min);
        assert_eq!(cost(&r.plan, &bq, &params).unwrap(), r.cost);
    }

    /// A–B–C chain whose A⋈B is far smaller than B⋈C.
    #[test]
    fn chain_prefers_cheap_pair() {
        let t = |name: &str, cols: &[&str]| TableStats {
            name: name.into(),
            row_count: 1000,
            columns: cols
                .iter()
                .map(|c| ColumnStats {
                    name: c.to_string(),
                    distinct_count: 100,
                    indexed: false,
                })
                .collect(),
            global_column_offset: 0,
        };
        let cat = Catalog::new(vec![t("A", &["x"]), t("B", &["y", "z"]), t("C", &["w"])]).unwrap();
        let q = JoinQuery::new(
            "chain",
            vec!["A".into(), "B".into(), "C".into()],
            vec!["A.x = B.y".parse().unwrap(), "B.z = C.w".parse().unwrap()],
            false,
            &cat,
        )
        .unwrap();
        let mut lookup = LookupTable::new();
        for (rels, preds, card) in [
            (vec!["A"], vec![], 1000.0),
            (vec!["B"], vec![], 1000.0),
            (vec!["C"], vec![], 1000.0),
            (vec!["A", "B"], vec!["A.x=B.y"], 10.0),
            (vec!["B", "C"], vec!["B.z=C.w"], 1e6),
            (vec!["A", "C"], vec![], 1e6),
            (vec!["A", "B", "C"], vec!["A.x=B.y", "B.z=C.w"], 100.0),
        ] {
            lookup.insert(lookup_key(rels, preds), card).unwrap();
        }
        let p = CardinalityProvider::Lookup(lookup);
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let params = CostParams::default();
        let dp = dp_left_deep(&bq, &params, DpOptions::default()).unwrap();
        let ex = exhaustive_left_deep(&bq, &params).unwrap();
        assert_eq!(dp.cost, ex.cost);
        let first_two: Vec<&str> = dp.plan.relations()[..2].to_vec();
        assert!(first_two.contains(&"A") && first_two.contains(&"B"), "{}", dp.plan);
    }

    #[test]
    fn dp_matches_oracles_on_synthetic_queries() {
        let cat = generate_synthetic_catalog(8, 5).unwrap();
        let g = SchemaGraph::from_naming(&cat);
        let w = generate_synthetic_workload(&cat, &g, 25, 2, 6, 17).unwrap();
        let p = CardinalityProvider::Estimated;
        let params = CostParams::default();
        for q in &w.queries {
            let bq = BoundQuery::new(q, &cat, &p).unwrap();
            let dp = dp_left_deep(&bq, &params, DpOptions::default()).unwrap();
            let ex = exhaustive_left_deep(&bq, &params).unwrap();
            let bushy = exhaustive_bushy(&bq, &params).unwrap();
            assert_eq!(dp.cost, ex.cost, "query {}", q.id);
            assert!(bushy.cost <= ex.cost);
            assert!(dp.plan.is_left_deep());
            assert_eq!(cost(&dp.plan, &bq, &params).unwrap(), dp.cost);
            assert_eq!(cost(&ex.plan, &bq, &params).unwrap(), ex.cost);
            assert_eq!(cost(&bushy.plan, &bq, &params).unwrap(), bushy.cost);
            let again = dp_left_deep(&bq, &params, DpOptions::default()).unwrap();
            assert_eq!(again.plan, dp.plan);
        }
    }

    #[test]
    fn forced_cross_products_stay_complete() {
        let cat = running_example_catalog();
        let q = JoinQuery::new(
            "x",
            vec!["P".into(), "OI".into(), "C".into()],
            vec!["P.id = OI.p_id".parse().unwrap()],
            true,
            &cat,
        )
        .unwrap();
        let p = CardinalityProvider::Estimated;
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let params = CostParams::default();
        let dp = dp_left_deep(&bq, &params, DpOptions::default()).unwrap();
        let ex = exhaustive_left_deep(&bq, &params).unwrap();
        assert_eq!(dp.cost, ex.cost);
        // C can only come last: P and OI are connected to each other.
        assert_eq!(dp.plan.relations()[2], "C");
        let free = dp_left_deep(
            &bq,
            &params,
            DpOptions {
                allow_cross: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(free.cost <= dp.cost);
    }

    #[test]
    fn relation_limits() {
        let cat = generate_synthetic_catalog(10, 2).unwrap();
        let g = SchemaGraph::from_naming(&cat);
        let w = generate_synthetic_workload(&cat, &g, 1, 9, 9, 1).unwrap();
        let p = CardinalityProvider::Estimated;
        let bq = BoundQuery::new(&w.queries[0], &cat, &p).unwrap();
        let params = CostParams::default();
        assert!(matches!(
            exhaustive_left_deep(&bq, &params),
            Err(Error::TooManyRelations { .. })
        ));
        assert!(exhaustive_bushy(&bq, &params).is_err());
        assert!(dp_left_deep(
            &bq,
            &params,
            DpOptions {
                max_relations: 8,
                ..Default::default()
            }
        )
        .is_err());
        assert!(dp_left_deep(&bq, &params, DpOptions::default()).is_ok());
    }
}
