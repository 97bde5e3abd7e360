//! Join ordering as a fully observed episodic environment.
//!
//! Each catalog table owns one row of the state matrix. At reset every query
//! relation sits alone in its row; an action `(i, j)` joins the sub-plans in
//! rows `i` and `j`, stores the result in row `i` and clears row `j`. A
//! `k`-relation query therefore terminates after exactly `k - 1` steps, and
//! the only non-zero reward arrives on the terminal step.

use crate::catalog::{CardinalityProvider, Catalog};
use crate::error::{Error, Result};
use crate::plancost::{reward_from_cost, CostEvaluator, CostParams, PlanNode, SubplanStats};
use crate::workload::{BoundQuery, JoinQuery, RelSet};

/// Ordered table pairs `(i, j)`, `i != j`, numbered
/// `i * (n - 1) + (j if j < i else j - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub n_tables: usize,
}

impl ActionSpace {
    pub fn new(n_tables: usize) -> Self {
        Self { n_tables }
    }

    pub fn size(&self) -> usize {
        self.n_tables * self.n_tables.saturating_sub(1)
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        let n = self.n_tables;
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidAction {
                action: usize::MAX,
                reason: format!("pair ({i}, {j}) is not an action for {n} tables"),
            });
        }
        Ok(i * (n - 1) + if j < i { j } else { j - 1 })
    }

    pub fn pair(&self, action: usize) -> Result<(usize, usize)> {
        if action >= self.size() {
            return Err(Error::InvalidAction {
                action,
                reason: format!("index out of range 0..{}", self.size()),
            });
        }
        let i = action / (self.n_tables - 1);
        let r = action % (self.n_tables - 1);
        Ok((i, if r < i { r } else { r + 1 }))
    }
}

/// Validity flag per action index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask(pub Vec<bool>);

impl ActionMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self, action: usize) -> bool {
        self.0.get(action).copied().unwrap_or(false)
    }

    pub fn valid_count(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }

    pub fn valid_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &v)| v).map(|(a, _)| a)
    }
}

/// Which joins the mask admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Pairs of non-empty rows linked by a predicate; every non-empty pair
    /// when no linked pair remains.
    #[default]
    Connected,
    /// Any pair of non-empty rows, cross products included.
    NonEmptyRows,
}

/// Query vector followed by the state matrix, row-major, as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    n_tables: usize,
    n_columns: usize,
    data: Vec<f64>,
}

impl Observation {
    fn zeros(n_tables: usize, n_columns: usize) -> Self {
        Self {
            n_tables,
            n_columns,
            data: vec![0.0; n_columns * (n_tables + 1)],
        }
    }

    pub fn query_vector(&self) -> &[f64] {
        &self.data[..self.n_columns]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.n_columns * (i + 1);
        &self.data[start..start + self.n_columns]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let start = self.n_columns * (i + 1);
        &mut self.data[start..start + self.n_columns]
    }

    pub fn n_tables(&self) -> usize {
        self.n_tables
    }

    pub fn flattened(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flattened(self) -> Vec<f64> {
        self.data
    }
}

/// Length of the flattened observation for `catalog`.
pub fn observation_size(catalog: &Catalog) -> usize {
    catalog.total_column_count() * (catalog.table_count() + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub mask: ActionMask,
}

/// One executed action of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub action: usize,
    pub pair: (usize, usize),
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub params: CostParams,
    pub mask_mode: MaskMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            params: CostParams::default(),
            mask_mode: MaskMode::Connected,
        }
    }
}

/// State of the running episode.
#[derive(Debug)]
pub struct EnvState<'a> {
    pub query: &'a JoinQuery,
    observation: Observation,
    row_plans: Vec<Option<PlanNode>>,
    row_stats: Vec<Option<SubplanStats>>,
    mask: ActionMask,
    pub steps_taken: usize,
    pub trace: Vec<TraceStep>,
    final_cost: Option<f64>,
}

impl EnvState<'_> {
    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn row_plan(&self, i: usize) -> Option<&PlanNode> {
        self.row_plans.get(i).and_then(Option::as_ref)
    }

    /// Relations of the sub-plan in row `i` (empty for empty rows).
    pub fn row_relations(&self, i: usize) -> RelSet {
        self.row_stats
            .get(i)
            .and_then(|s| s.as_ref())
            .map_or(RelSet::EMPTY, |s| s.relations)
    }

    pub fn non_empty_rows(&self) -> usize {
        self.row_plans.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_terminal(&self) -> bool {
        self.final_cost.is_some()
    }

    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    /// Cost of the final plan once the episode is over.
    pub fn final_cost(&self) -> Option<f64> {
        self.final_cost
    }
}

/// The environment. Borrows the catalog and cardinality provider; one
/// instance runs one episode at a time.
#[derive(Debug)]
pub struct JoinEnv<'a> {
    catalog: &'a Catalog,
    provider: &'a CardinalityProvider,
    config: EnvConfig,
    space: ActionSpace,
    bound: Option<BoundQuery<'a>>,
    state: Option<EnvState<'a>>,
}

impl<'a> JoinEnv<'a> {
    pub fn new(
        catalog: &'a Catalog,
        provider: &'a CardinalityProvider,
        config: EnvConfig,
    ) -> Result<Self> {
        config.params.validate()?;
        Ok(Self {
            catalog,
            provider,
            config,
            space: ActionSpace::new(catalog.table_count()),
            bound: None,
            state: None,
        })
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn observation_size(&self) -> usize {
        observation_size(self.catalog)
    }

    pub fn state(&self) -> Option<&EnvState<'a>> {
        self.state.as_ref()
    }

    pub fn bound_query(&self) -> Option<&BoundQuery<'a>> {
        self.bound.as_ref()
    }

    /// Starts an episode for `query`.
    pub fn reset(&mut self, query: &'a JoinQuery) -> Result<StepOutcome> {
        if query.relation_count() < 2 {
            return Err(Error::InvalidQuery {
                query: query.id.clone(),
                reason: "an episode needs at least two relations".into(),
            });
        }
        let bq = BoundQuery::new(query, self.catalog, self.provider)?;
        let n = self.catalog.table_count();
        let mut obs = Observation::zeros(n, self.catalog.total_column_count());
        let mut row_plans = vec![None; n];
        let mut row_stats = vec![None; n];
        {
            let mut eval = CostEvaluator::new(&bq, self.config.params);
            for rel in &query.relations {
                let pos = bq.position(rel)?;
                let span = self.catalog.tables()[pos].column_span();
                for c in span {
                    obs.data[c] = 1.0;
                    obs.row_mut(pos)[c] = 1.0;
                }
                row_plans[pos] = Some(PlanNode::leaf(rel.as_str()));
                row_stats[pos] = Some(eval.base(pos)?);
            }
        }
        let mut state = EnvState {
            query,
            observation: obs,
            row_plans,
            row_stats,
            mask: ActionMask(Vec::new()),
            steps_taken: 0,
            trace: Vec::new(),
            final_cost: None,
        };
        state.mask = compute_mask(&bq, &state, self.space, self.config.mask_mode);
        let outcome = StepOutcome {
            observation: state.observation.clone(),
            reward: 0.0,
            done: false,
            mask: state.mask.clone(),
        };
        self.bound = Some(bq);
        self.state = Some(state);
        Ok(outcome)
    }

    /// Mask of the current live state.
    pub fn valid_action_mask(&self) -> Result<ActionMask> {
        let state = self.live_state()?;
        Ok(state.mask.clone())
    }

    fn live_state(&self) -> Result<&EnvState<'a>> {
        match &self.state {
            None => Err(Error::Config("environment has not been reset".into())),
            Some(s) if s.is_terminal() => Err(Error::EpisodeTerminal),
            Some(s) => Ok(s),
        }
    }

    /// Applies `action`; invalid actions are rejected and leave the state untouched.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        self.live_state()?;
        let (i, j) = self.space.pair(action)?;
        let bq = self.bound.as_ref().expect("bound with state");
        let state = self.state.as_mut().expect("live state");
        if !state.mask.is_valid(action) {
            return Err(Error::InvalidAction {
                action,
                reason: format!("pair ({i}, {j}) is masked"),
            });
        }
        let mut eval = CostEvaluator::new(bq, self.config.params);
        let left = state.row_stats[i].expect("valid action has a left row");
        let right = state.row_stats[j].expect("valid action has a right row");
        let (alg, stats) = eval.best_join(&left, &right)?;

        let lp = state.row_plans[i].take().expect("left plan");
        let rp = state.row_plans[j].take().expect("right plan");
        state.row_plans[i] = Some(PlanNode::join(lp, rp, alg));
        state.row_stats[i] = Some(stats);
        state.row_stats[j] = None;
        let n_cols = state.observation.n_columns;
        let moved = state.observation.row(j).to_vec();
        for (dst, src) in state.observation.row_mut(i).iter_mut().zip(moved) {
            if src != 0.0 {
                *dst = 1.0;
            }
        }
        state.observation.row_mut(j).fill(0.0);
        debug_assert_eq!(state.observation.row(j).len(), n_cols);
        state.steps_taken += 1;

        let done = stats.relations == bq.relations();
        let reward = if done {
            state.final_cost = Some(stats.cost);
            state.mask = ActionMask(vec![false; self.space.size()]);
            reward_from_cost(stats.cost, &self.config.params)?
        } else {
            state.mask = compute_mask(bq, state, self.space, self.config.mask_mode);
            0.0
        };
        state.trace.push(TraceStep {
            step: state.steps_taken,
            action,
            pair: (i, j),
            reward,
        });
        Ok(StepOutcome {
            observation: state.observation.clone(),
            reward,
            done,
            mask: state.mask.clone(),
        })
    }

    /// The complete plan of a finished episode.
    pub fn final_plan(&self) -> Result<&PlanNode> {
        let state = self.state.as_ref().ok_or(Error::EpisodeNotTerminal)?;
        if !state.is_terminal() {
            return Err(Error::EpisodeNotTerminal);
        }
        Ok(state
            .row_plans
            .iter()
            .flatten()
            .next()
            .expect("terminal state keeps one row"))
    }

    /// Trace records `(query id, step, (i, j), reward, plan text at terminal)`.
    pub fn trace_records(&self) -> Vec<(String, usize, (usize, usize), f64, Option<String>)> {
        let Some(state) = &self.state else {
            return Vec::new();
        };
        let plan_text = self.final_plan().ok().map(|p| p.to_string());
        let last = state.trace.len();
        state
            .trace
            .iter()
            .map(|t| {
                (
                    state.query.id.clone(),
                    t.step,
                    t.pair,
                    t.reward,
                    if t.step == last { plan_text.clone() } else { None },
                )
            })
            .collect()
    }
}

fn compute_mask(
    bq: &BoundQuery<'_>,
    state: &EnvState<'_>,
    space: ActionSpace,
    mode: MaskMode,
) -> ActionMask {
    let n = space.n_tables;
    let rows: Vec<usize> = (0..n).filter(|&r| state.row_stats[r].is_some()).collect();
    let mut mask = vec![false; space.size()];
    let mut any = false;
    if mode == MaskMode::Connected {
        for &i in &rows {
            for &j in &rows {
                if i != j && bq.connected(state.row_relations(i), state.row_relations(j)) {
                    mask[space.index(i, j).expect("in range")] = true;
                    any = true;
                }
            }
        }
    }
    if !any {
        for &i in &rows {
            for &j in &rows {
                if i != j {
                    mask[space.index(i, j).expect("in range")] = true;
                }
            }
        }
    }
    ActionMask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{running_example_catalog, running_example_query};
    use crate::plancost::cost;
    use rand::{Rng, SeedableRng};

    #[test]
    fn action_index_bijection() {
        for n in 2..8 {
            let s = ActionSpace::new(n);
            for a in 0..s.size() {
                let (i, j) = s.pair(a).unwrap();
                assert_eq!(s.index(i, j).unwrap(), a);
            }
        }
        assert_eq!(ActionSpace::new(4).index(3, 2).unwrap(), 11);
        assert!(ActionSpace::new(4).pair(12).is_err());
    }

    #[test]
    fn reset_featurization() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        let out = env.reset(&q).unwrap();
        assert_eq!(out.observation.flattened().len(), 55);
        assert!(out.observation.query_vector().iter().all(|&v| v == 1.0));
        let spans = [0..3, 3..6, 6..9, 9..11];
        for (r, span) in spans.iter().enumerate() {
            for c in 0..11 {
                assert_eq!(out.observation.row(r)[c], if span.contains(&c) { 1.0 } else { 0.0 });
            }
        }
        assert!(!out.done);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn non_empty_rows_mask_allows_every_pair_at_reset() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let cfg = EnvConfig {
            mask_mode: MaskMode::NonEmptyRows,
            ..Default::default()
        };
        let mut env = JoinEnv::new(&cat, &p, cfg).unwrap();
        assert_eq!(env.reset(&q).unwrap().mask.valid_count(), 12);
        // The chain admits only the three linked pairs in both directions.
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        assert_eq!(env.reset(&q).unwrap().mask.valid_count(), 6);
    }

    #[test]
    fn merge_keeps_left_row() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        env.reset(&q).unwrap();
        let out = env.step(11).unwrap();
        assert_eq!(env.state().unwrap().non_empty_rows(), 3);
        assert!(out.observation.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(&out.observation.row(3)[6..11], &[1.0; 5]);
        for a in 0..12 {
            let (i, j) = ActionSpace::new(4).pair(a).unwrap();
            if i == 2 || j == 2 {
                assert!(!out.mask.is_valid(a));
            }
        }
        env.step(ActionSpace::new(4).index(0, 1).unwrap()).unwrap();
        let last = env.step(ActionSpace::new(4).index(0, 3).unwrap()).unwrap();
        assert!(last.done);
        let plan = env.final_plan().unwrap();
        assert_eq!(plan.relations(), vec!["P", "OI", "C", "O"]);
        assert!(!plan.is_left_deep());
        let bq = env.bound_query().unwrap();
        let c = cost(plan, bq, &env.config().params).unwrap();
        assert_eq!(
            last.reward,
            reward_from_cost(c, &env.config().params).unwrap()
        );
        assert!(env.step(0).is_err());
    }

    #[test]
    fn invalid_action_leaves_state_untouched() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        env.reset(&q).unwrap();
        env.step(11).unwrap();
        let before = env.state().unwrap().observation().clone();
        let bad = ActionSpace::new(4).index(0, 2).unwrap();
        assert!(matches!(env.step(bad), Err(Error::InvalidAction { .. })));
        assert_eq!(env.state().unwrap().observation(), &before);
        assert_eq!(env.state().unwrap().steps_taken, 1);
        assert!(env.final_plan().is_err());
    }

    #[test]
    fn partial_query_and_rejections() {
        let cat = running_example_catalog();
        let p = CardinalityProvider::Estimated;
        let q = JoinQuery::new(
            "q2",
            vec!["P".into(), "OI".into()],
            vec!["P.id = OI.p_id".parse().unwrap()],
            false,
            &cat,
        )
        .unwrap();
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        let out = env.reset(&q).unwrap();
        assert_eq!(env.state().unwrap().non_empty_rows(), 2);
        assert_eq!(&out.observation.query_vector()[..6], &[1.0; 6]);
        assert!(out.observation.query_vector()[6..].iter().all(|&v| v == 0.0));
        assert_eq!(out.mask.valid_count(), 2);
        let done = env.step(out.mask.valid_actions().next().unwrap()).unwrap();
        assert!(done.done);
        assert_eq!(env.final_plan().unwrap().join_count(), 1);

        let mut single = q.clone();
        single.relations.truncate(1);
        single.predicates.clear();
        assert!(env.reset(&single).is_err());
        let mut unknown = q.clone();
        unknown.relations[1] = "Nope".into();
        assert!(env.reset(&unknown).is_err());
    }

    /// Two components with no predicate between them: the fallback opens
    /// exactly the pairs across components.
    #[test]
    fn cross_product_fallback() {
        let cat = running_example_catalog();
        let p = CardinalityProvider::Estimated;
        let q = JoinQuery::new(
            "x",
            vec!["P".into(), "OI".into(), "O".into(), "C".into()],
            vec!["P.id = OI.p_id".parse().unwrap(), "O.c_id = C.id".parse().unwrap()],
            true,
            &cat,
        )
        .unwrap();
        let s = ActionSpace::new(4);
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        env.reset(&q).unwrap();
        env.step(s.index(0, 1).unwrap()).unwrap();
        let out = env.step(s.index(3, 2).unwrap()).unwrap();
        let mut valid: Vec<_> = out.mask.valid_actions().map(|a| s.pair(a).unwrap()).collect();
        valid.sort();
        assert_eq!(valid, vec![(0, 3), (3, 0)]);
        assert!(env.step(s.index(3, 0).unwrap()).unwrap().done);
    }

    #[test]
    fn random_episodes_conserve_relations() {
        let cat = crate::catalog::generate_synthetic_catalog(9, 4).unwrap();
        let g = crate::workload::SchemaGraph::from_naming(&cat);
        let w = crate::workload::generate_synthetic_workload(&cat, &g, 20, 2, 7, 9).unwrap();
        let p = CardinalityProvider::Estimated;
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for q in &w.queries {
            let mut out = env.reset(q).unwrap();
            let mut steps = 0;
            while !out.done {
                let valid: Vec<usize> = out.mask.valid_actions().collect();
                out = env.step(valid[rng.gen_range(0..valid.len())]).unwrap();
                steps += 1;
                let st = env.state().unwrap();
                let mut union = RelSet::EMPTY;
                for r in 0..cat.table_count() {
                    assert!(!union.intersects(st.row_relations(r)));
                    union = union.union(st.row_relations(r));
                }
                assert_eq!(union, env.bound_query().unwrap().relations());
                assert!(out.done || out.reward == 0.0);
            }
            assert_eq!(steps, q.relation_count() - 1);
            assert!((-10.0..=0.0).contains(&out.reward));
            assert_eq!(env.trace_records().len(), steps);
        }
    }
}
