//! Join trees, the main-memory cost model and the cost-to-reward mapping.
//!
//! For a base relation `R`, a hash join and an index nested-loop join:
//!
//! ```text
//! C(R)              = tau * |R|
//! C(Ql hj Qr)       = |Q| + C(Ql) + C(Qr)
//! C(Ql ij R)        = C(Ql) + lambda * |Ql| * max(|Ql ⋈ R| / |Ql|, 1)
//! ```
//!
//! The index nested-loop case requires the inner side to be a base relation
//! with an index on its column of a connecting predicate. When `|Ql| = 0` the
//! lookup term is zero.
//!
//! Plans have a canonical text form: a leaf is a table name, a join is
//! `(<left> hj <right>)` or `(<left> ij <right>)`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::workload::{BoundQuery, RelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JoinAlgorithm {
    HashJoin,
    IndexNestedLoopJoin,
}

impl JoinAlgorithm {
    pub fn tag(self) -> &'static str {
        match self {
            JoinAlgorithm::HashJoin => "hj",
            JoinAlgorithm::IndexNestedLoopJoin => "ij",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PlanNode {
    Leaf(String),
    Join {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        algorithm: JoinAlgorithm,
    },
}

impl PlanNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        PlanNode::Leaf(name.into())
    }

    pub fn join(left: PlanNode, right: PlanNode, algorithm: JoinAlgorithm) -> Self {
        PlanNode::Join {
            left: Box::new(left),
            right: Box::new(right),
            algorithm,
        }
    }

    pub fn hash_join(left: PlanNode, right: PlanNode) -> Self {
        Self::join(left, right, JoinAlgorithm::HashJoin)
    }

    /// Base relations in left-to-right leaf order.
    pub fn relations(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            PlanNode::Leaf(name) => out.push(name),
            PlanNode::Join { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn join_count(&self) -> usize {
        match self {
            PlanNode::Leaf(_) => 0,
            PlanNode::Join { left, right, .. } => 1 + left.join_count() + right.join_count(),
        }
    }

    /// Every join's right input is a base relation.
    pub fn is_left_deep(&self) -> bool {
        match self {
            PlanNode::Leaf(_) => true,
            PlanNode::Join { left, right, .. } => {
                matches!(**right, PlanNode::Leaf(_)) && left.is_left_deep()
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, PlanNode::Leaf(_))
    }

    /// Checks that no table appears twice and that every index nested-loop
    /// join has a base relation as its inner input.
    pub fn validate_structure(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for rel in self.relations() {
            if !seen.insert(rel) {
                return Err(Error::InvalidPlan(format!("table `{rel}` appears twice")));
            }
        }
        self.check_ij_shape()
    }

    fn check_ij_shape(&self) -> Result<()> {
        if let PlanNode::Join {
            left,
            right,
            algorithm,
        } = self
        {
            if *algorithm == JoinAlgorithm::IndexNestedLoopJoin && !right.is_leaf() {
                return Err(Error::InvalidPlan(format!(
                    "index nested-loop join needs a base relation on the inner side: {self}"
                )));
            }
            left.check_ij_shape()?;
            right.check_ij_shape()?;
        }
        Ok(())
    }
}

impl fmt::Display for PlanNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanNode::Leaf(name) => f.write_str(name),
            PlanNode::Join {
                left,
                right,
                algorithm,
            } => write!(f, "({left} {} {right})", algorithm.tag()),
        }
    }
}

/// Canonical text of a plan.
pub fn plan_to_text(plan: &PlanNode) -> String {
    plan.to_string()
}

/// Parses canonical plan text and checks it against `catalog`.
pub fn text_to_plan(text: &str, catalog: &Catalog) -> Result<PlanNode> {
    let plan = parse_plan(text)?;
    for rel in plan.relations() {
        catalog.require_position(rel)?;
    }
    plan.validate_structure()?;
    Ok(plan)
}

/// Parses canonical plan text without catalog checks.
pub fn parse_plan(text: &str) -> Result<PlanNode> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let plan = parse_node(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::parse(
            "plan",
            format!("unexpected `{}` after a complete plan", tokens[pos]),
        ));
    }
    Ok(plan)
}

fn tokenize(text: &str) -> Result<Vec<&str>> {
    let mut tokens = Vec::new();
    let mut rest = text;
    loop {
        rest = rest.trim_start();
        let Some(c) = rest.chars().next() else {
            break;
        };
        if c == '(' || c == ')' {
            tokens.push(&rest[..1]);
            rest = &rest[1..];
        } else if c.is_ascii_alphanumeric() || c == '_' {
            let end = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            tokens.push(&rest[..end]);
            rest = &rest[end..];
        } else {
            return Err(Error::parse("plan", format!("unexpected character `{c}`")));
        }
    }
    Ok(tokens)
}

fn parse_node(tokens: &[&str], pos: &mut usize) -> Result<PlanNode> {
    let tok = *tokens
        .get(*pos)
        .ok_or_else(|| Error::parse("plan", "unexpected end of input"))?;
    *pos += 1;
    if tok == "(" {
        let left = parse_node(tokens, pos)?;
        let algorithm = match tokens.get(*pos).copied() {
            Some("hj") => JoinAlgorithm::HashJoin,
            Some("ij") => JoinAlgorithm::IndexNestedLoopJoin,
            other => {
                return Err(Error::parse(
                    "plan",
                    format!("expected `hj` or `ij`, found {other:?}"),
                ))
            }
        };
        *pos += 1;
        let right = parse_node(tokens, pos)?;
        if tokens.get(*pos).copied() != Some(")") {
            return Err(Error::parse("plan", "expected `)`"));
        }
        *pos += 1;
        Ok(PlanNode::join(left, right, algorithm))
    } else if tok == ")" || tok == "hj" || tok == "ij" {
        Err(Error::parse("plan", format!("unexpected `{tok}`")))
    } else {
        Ok(PlanNode::Leaf(tok.to_string()))
    }
}

/// Constants of the cost model and reward mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Scan discount relative to a join, `tau <= 1`.
    pub tau: f64,
    /// Index lookup penalty relative to a hash lookup, `lambda >= 1`.
    pub lambda: f64,
    /// Costs above this bound map to `min_reward`.
    pub upper_bound: f64,
    pub min_reward: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            tau: 0.2,
            lambda: 2.0,
            upper_bound: 1e13,
            min_reward: -10.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 1, got {}", self.lambda)));
        }
        if !(self.upper_bound > 0.0 && self.upper_bound.is_finite()) {
            return Err(Error::Config(format!(
                "upper_bound must be positive, got {}",
                self.upper_bound
            )));
        }
        if !(self.min_reward < 0.0 && self.min_reward.is_finite()) {
            return Err(Error::Config(format!(
                "min_reward must be negative, got {}",
                self.min_reward
            )));
        }
        Ok(())
    }

    pub fn with_upper_bound(self, upper_bound: f64) -> Self {
        Self {
            upper_bound,
            ..self
        }
    }
}

/// Cost of scanning a base relation.
pub fn scan_cost(cardinality: f64, params: &CostParams) -> f64 {
    params.tau * cardinality
}

/// Cost of one join node given its inputs' costs and cardinalities.
pub fn join_cost(
    algorithm: JoinAlgorithm,
    left_cost: f64,
    left_card: f64,
    right_cost: f64,
    out_card: f64,
    params: &CostParams,
) -> f64 {
    match algorithm {
        JoinAlgorithm::HashJoin => out_card + left_cost + right_cost,
        JoinAlgorithm::IndexNestedLoopJoin => {
            if left_card == 0.0 {
                left_cost
            } else {
                left_cost + params.lambda * left_card * (out_card / left_card).max(1.0)
            }
        }
    }
}

/// Cost, cardinality and relation set of an already-costed sub-plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubplanStats {
    pub cost: f64,
    pub cardinality: f64,
    pub relations: RelSet,
    /// Catalog position when the sub-plan is a base relation.
    pub base: Option<usize>,
}

/// Cheapest legal algorithm for joining two costed inputs; ties go to the hash join.
pub fn best_join(
    left: &SubplanStats,
    right: &SubplanStats,
    out_card: f64,
    bq: &BoundQuery<'_>,
    params: &CostParams,
) -> (JoinAlgorithm, f64) {
    let hj = join_cost(
        JoinAlgorithm::HashJoin,
        left.cost,
        left.cardinality,
        right.cost,
        out_card,
        params,
    );
    if let Some(inner) = right.base {
        if bq.index_probe_available(left.relations, inner) {
            let ij = join_cost(
                JoinAlgorithm::IndexNestedLoopJoin,
                left.cost,
                left.cardinality,
                right.cost,
                out_card,
                params,
            );
            if ij < hj {
                return (JoinAlgorithm::IndexNestedLoopJoin, ij);
            }
        }
    }
    (JoinAlgorithm::HashJoin, hj)
}

fn stats_rec(plan: &PlanNode, bq: &BoundQuery<'_>, params: &CostParams) -> Result<SubplanStats> {
    match plan {
        PlanNode::Leaf(name) => {
            let pos = bq.position(name)?;
            let relations = RelSet::single(pos);
            let cardinality = bq.cardinality(relations)?;
            Ok(SubplanStats {
                cost: scan_cost(cardinality, params),
                cardinality,
                relations,
                base: Some(pos),
            })
        }
        PlanNode::Join {
            left,
            right,
            algorithm,
        } => {
            let l = stats_rec(left, bq, params)?;
            let r = stats_rec(right, bq, params)?;
            if l.relations.intersects(r.relations) {
                return Err(Error::InvalidPlan(format!("overlapping join inputs in {plan}")));
            }
            let relations = l.relations.union(r.relations);
            let cardinality = bq.cardinality(relations)?;
            if *algorithm == JoinAlgorithm::IndexNestedLoopJoin {
                let Some(inner) = r.base else {
                    return Err(Error::InvalidPlan(format!(
                        "index nested-loop join needs a base relation on the inner side: {plan}"
                    )));
                };
                if !bq.index_probe_available(l.relations, inner) {
                    return Err(Error::InvalidPlan(format!(
                        "no indexed join column on `{}` for {plan}",
                        bq.name(inner)
                    )));
                }
            }
            let cost = join_cost(*algorithm, l.cost, l.cardinality, r.cost, cardinality, params);
            Ok(SubplanStats {
                cost,
                cardinality,
                relations,
                base: None,
            })
        }
    }
}

/// Cost of a plan for the query bound in `bq`.
pub fn cost(plan: &PlanNode, bq: &BoundQuery<'_>, params: &CostParams) -> Result<f64> {
    Ok(plan_stats(plan, bq, params)?.cost)
}

/// Cost, cardinality and relation set of a plan.
pub fn plan_stats(plan: &PlanNode, bq: &BoundQuery<'_>, params: &CostParams) -> Result<SubplanStats> {
    stats_rec(plan, bq, params)
}

/// Picks the cheaper legal algorithm for joining two un-annotated inputs.
pub fn best_algorithm_cost(
    left: &PlanNode,
    right: &PlanNode,
    bq: &BoundQuery<'_>,
    params: &CostParams,
) -> Result<(JoinAlgorithm, f64)> {
    let l = plan_stats(left, bq, params)?;
    let r = plan_stats(right, bq, params)?;
    if l.relations.intersects(r.relations) {
        return Err(Error::InvalidPlan(format!(
            "join inputs {left} and {right} overlap"
        )));
    }
    let out = bq.cardinality(l.relations.union(r.relations))?;
    Ok(best_join(&l, &r, out, bq, params))
}

/// Cost evaluation with memoized cardinalities, for repeated costing of many
/// plans over one query.
#[derive(Debug)]
pub struct CostEvaluator<'q, 'a> {
    bq: &'q BoundQuery<'a>,
    params: CostParams,
    cardinalities: HashMap<RelSet, f64>,
}

impl<'q, 'a> CostEvaluator<'q, 'a> {
    pub fn new(bq: &'q BoundQuery<'a>, params: CostParams) -> Self {
        Self {
            bq,
            params,
            cardinalities: HashMap::new(),
        }
    }

    pub fn bound_query(&self) -> &'q BoundQuery<'a> {
        self.bq
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn cardinality(&mut self, set: RelSet) -> Result<f64> {
        if let Some(&c) = self.cardinalities.get(&set) {
            return Ok(c);
        }
        let c = self.bq.cardinality(set)?;
        self.cardinalities.insert(set, c);
        Ok(c)
    }

    pub fn base(&mut self, pos: usize) -> Result<SubplanStats> {
        let relations = RelSet::single(pos);
        let cardinality = self.cardinality(relations)?;
        Ok(SubplanStats {
            cost: scan_cost(cardinality, &self.params),
            cardinality,
            relations,
            base: Some(pos),
        })
    }

    /// Joins two costed inputs with the cheapest legal algorithm.
    pub fn best_join(
        &mut self,
        left: &SubplanStats,
        right: &SubplanStats,
    ) -> Result<(JoinAlgorithm, SubplanStats)> {
        let relations = left.relations.union(right.relations);
        let cardinality = self.cardinality(relations)?;
        let (alg, cost) = best_join(left, right, cardinality, self.bq, &self.params);
        Ok((
            alg,
            SubplanStats {
                cost,
                cardinality,
                relations,
                base: None,
            },
        ))
    }

    pub fn cost(&mut self, plan: &PlanNode) -> Result<f64> {
        Ok(self.stats(plan)?.cost)
    }

    fn stats(&mut self, plan: &PlanNode) -> Result<SubplanStats> {
        match plan {
            PlanNode::Leaf(name) => {
                let pos = self.bq.position(name)?;
                self.base(pos)
            }
            PlanNode::Join {
                left,
                right,
                algorithm,
            } => {
                let l = self.stats(left)?;
                let r = self.stats(right)?;
                if l.relations.intersects(r.relations) {
                    return Err(Error::InvalidPlan(format!("overlapping join inputs in {plan}")));
                }
                let relations = l.relations.union(r.relations);
                let cardinality = self.cardinality(relations)?;
                if *algorithm == JoinAlgorithm::IndexNestedLoopJoin {
                    match r.base {
                        Some(inner) if self.bq.index_probe_available(l.relations, inner) => {}
                        _ => {
                            return Err(Error::InvalidPlan(format!(
                                "illegal index nested-loop join in {plan}"
                            )))
                        }
                    }
                }
                Ok(SubplanStats {
                    cost: join_cost(
                        *algorithm,
                        l.cost,
                        l.cardinality,
                        r.cost,
                        cardinality,
                        &self.params,
                    ),
                    cardinality,
                    relations,
                    base: None,
                })
            }
        }
    }
}

/// Maps a cost to a reward in `[min_reward, 0]` with a square-root scale;
/// costs above `upper_bound` are clipped to `min_reward`.
pub fn reward_from_cost(cost: f64, params: &CostParams) -> Result<f64> {
    if cost.is_nan() || cost < 0.0 {
        return Err(Error::InvalidStatistic(format!(
            "cost must be non-negative, got {cost}"
        )));
    }
    if cost > params.upper_bound {
        return Ok(params.min_reward);
    }
    Ok(params.min_reward * (cost / params.upper_bound).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{lookup_key, CardinalityProvider, ColumnStats, LookupTable, TableStats};
    use crate::fixtures::{running_example_catalog, running_example_query};
    use crate::workload::JoinQuery;
    use proptest::prelude::*;

    /// A(1000) ⋈ B(500) ⋈ C(800) chain with exact cardinalities from a lookup.
    fn abc() -> (Catalog, JoinQuery, CardinalityProvider) {
        let t = |name: &str, rows: u64, cols: &[(&str, bool)]| TableStats {
            name: name.into(),
            row_count: rows,
            columns: cols
                .iter()
                .map(|&(n, i)| ColumnStats {
                    name: n.into(),
                    distinct_count: 10,
                    indexed: i,
                })
                .collect(),
            global_column_offset: 0,
        };
        let cat = Catalog::new(vec![
            t("A", 1000, &[("x", false)]),
            t("B", 500, &[("y", true), ("z", false)]),
            t("C", 800, &[("w", true)]),
        ])
        .unwrap();
        let q = JoinQuery::new(
            "abc",
            vec!["A".into(), "B".into(), "C".into()],
            vec!["A.x = B.y".parse().unwrap(), "B.z = C.w".parse().unwrap()],
            false,
            &cat,
        )
        .unwrap();
        let mut lookup = LookupTable::new();
        for (rels, preds, card) in [
            (vec!["A"], vec![], 1000.0),
            (vec!["B"], vec![], 500.0),
            (vec!["C"], vec![], 800.0),
            (vec!["A", "B"], vec!["A.x=B.y"], 2000.0),
            (vec!["B", "C"], vec!["B.z=C.w"], 300.0),
            (vec!["A", "C"], vec![], 800_000.0),
            (vec!["A", "B", "C"], vec!["A.x=B.y", "B.z=C.w"], 1500.0),
        ] {
            lookup.insert(lookup_key(rels, preds), card).unwrap();
        }
        (cat, q, CardinalityProvider::Lookup(lookup))
    }

    #[test]
    fn scan_case() {
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        assert_eq!(cost(&PlanNode::leaf("A"), &bq, &CostParams::default()).unwrap(), 200.0);
    }

    #[test]
    fn hash_join_case() {
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let plan = PlanNode::hash_join(PlanNode::leaf("A"), PlanNode::leaf("B"));
        assert_eq!(cost(&plan, &bq, &CostParams::default()).unwrap(), 2300.0);
    }

    #[test]
    fn index_join_case() {
        // C(Ql) = 2300, |Ql| = 2000, |Ql ⋈ C| = 1500: 2300 + 2 * 2000 * max(0.75, 1).
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let plan = PlanNode::join(
            PlanNode::hash_join(PlanNode::leaf("A"), PlanNode::leaf("B")),
            PlanNode::leaf("C"),
            JoinAlgorithm::IndexNestedLoopJoin,
        );
        assert_eq!(cost(&plan, &bq, &CostParams::default()).unwrap(), 6300.0);
    }

    #[test]
    fn index_join_with_empty_outer() {
        assert_eq!(
            join_cost(JoinAlgorithm::IndexNestedLoopJoin, 7.0, 0.0, 1e9, 0.0, &CostParams::default()),
            7.0
        );
    }

    #[test]
    fn illegal_index_joins() {
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let params = CostParams::default();
        // A.x is not indexed.
        let plan = PlanNode::join(PlanNode::leaf("B"), PlanNode::leaf("A"), JoinAlgorithm::IndexNestedLoopJoin);
        assert!(matches!(cost(&plan, &bq, &params), Err(Error::InvalidPlan(_))));
        // Inner side not a base relation.
        let plan = PlanNode::join(
            PlanNode::leaf("A"),
            PlanNode::hash_join(PlanNode::leaf("B"), PlanNode::leaf("C")),
            JoinAlgorithm::IndexNestedLoopJoin,
        );
        assert!(cost(&plan, &bq, &params).is_err());
        assert!(plan.validate_structure().is_err());
    }

    #[test]
    fn best_algorithm_selection() {
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let params = CostParams::default();
        let ab = PlanNode::hash_join(PlanNode::leaf("A"), PlanNode::leaf("B"));
        // hj: 1500 + 2300 + 160 = 3960; ij: 2300 + 4000 = 6300.
        assert_eq!(
            best_algorithm_cost(&ab, &PlanNode::leaf("C"), &bq, &params).unwrap(),
            (JoinAlgorithm::HashJoin, 3960.0)
        );
        // Non-leaf inner side forces a hash join.
        let bc = PlanNode::hash_join(PlanNode::leaf("B"), PlanNode::leaf("C"));
        let (alg, _) = best_algorithm_cost(&PlanNode::leaf("A"), &bc, &bq, &params).unwrap();
        assert_eq!(alg, JoinAlgorithm::HashJoin);
        // A ij B: 200 + 2 * 1000 * 2 = 4200 vs hj 2000 + 200 + 100 = 2300.
        let (alg, c) =
            best_algorithm_cost(&PlanNode::leaf("A"), &PlanNode::leaf("B"), &bq, &params).unwrap();
        assert_eq!((alg, c), (JoinAlgorithm::HashJoin, 2300.0));
    }

    #[test]
    fn ties_go_to_hash_join() {
        let (cat, q, p) = abc();
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let left = SubplanStats {
            cost: 0.0,
            cardinality: 10.0,
            relations: RelSet::single(0),
            base: Some(0),
        };
        let right = SubplanStats {
            cost: 10.0,
            cardinality: 100.0,
            relations: RelSet::single(1),
            base: Some(1),
        };
        // hj = 10 + 0 + 10 = 20; ij = 0 + 2 * 10 * max(1, 1) = 20.
        let (alg, c) = best_join(&left, &right, 10.0, &bq, &CostParams::default());
        assert_eq!((alg, c), (JoinAlgorithm::HashJoin, 20.0));
    }

    #[test]
    fn reward_mapping() {
        let p = CostParams::default();
        assert_eq!(reward_from_cost(1e13, &p).unwrap(), -10.0);
        assert_eq!(reward_from_cost(2.5e12, &p).unwrap(), -5.0);
        assert_eq!(reward_from_cost(4e13, &p).unwrap(), -10.0);
        assert_eq!(reward_from_cost(0.0, &p).unwrap(), 0.0);
        assert!(reward_from_cost(-1.0, &p).is_err());
        assert!(reward_from_cost(f64::NAN, &p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(CostParams::default().validate().is_ok());
        for bad in [
            CostParams { tau: 1.5, ..Default::default() },
            CostParams { lambda: 0.5, ..Default::default() },
            CostParams { upper_bound: 0.0, ..Default::default() },
            CostParams { min_reward: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn text_format() {
        let cat = running_example_catalog();
        let plan = text_to_plan("((P hj OI) hj (O hj C))", &cat).unwrap();
        assert_eq!(plan.join_count(), 3);
        assert!(!plan.is_left_deep());
        assert_eq!(plan_to_text(&plan), "((P hj OI) hj (O hj C))");
        assert!(text_to_plan("((P hj OI) ij O)", &cat).unwrap().is_left_deep());
        assert!(matches!(text_to_plan("(P hj P)", &cat), Err(Error::InvalidPlan(_))));
        assert!(text_to_plan("(P hj Z)", &cat).is_err());
        assert!(text_to_plan("(P xx OI)", &cat).is_err());
        assert!(text_to_plan("(P hj OI", &cat).is_err());
        assert!(text_to_plan("(P hj OI))", &cat).is_err());
        assert!(text_to_plan("(P ij (OI hj O))", &cat).is_err());
    }

    #[test]
    fn cardinality_is_shape_invariant() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let card = |t: &str| {
            crate::catalog::cardinality_of_plan(&parse_plan(t).unwrap(), &q.predicates, &p, &cat)
                .unwrap()
        };
        assert_eq!(card("(P hj OI)"), card("(OI hj P)"));
        assert_eq!(card("P"), 1000.0);
        assert_eq!(card("((P hj OI) hj O)"), card("(P hj (OI hj O))"));
        assert_eq!(card("((P hj OI) hj (O hj C))"), card("(C hj ((O hj P) hj OI))"));
    }

    #[test]
    fn bound_and_name_based_cardinalities_agree() {
        let cat = running_example_catalog();
        let q = running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let bq = BoundQuery::new(&q, &cat, &p).unwrap();
        let plan = parse_plan("((P hj OI) hj (O hj C))").unwrap();
        let a = plan_stats(&plan, &bq, &CostParams::default()).unwrap().cardinality;
        let b = crate::catalog::cardinality_of_plan(&plan, &q.predicates, &p, &cat).unwrap();
        assert_eq!(a, b);
    }

    fn arb_plan(leaves: Vec<&'static str>) -> impl Strategy<Value = PlanNode> {
        Just(leaves).prop_shuffle().prop_flat_map(|leaves| build(leaves))
    }

    fn build(leaves: Vec<&'static str>) -> BoxedStrategy<PlanNode> {
        if leaves.len() == 1 {
            return Just(PlanNode::leaf(leaves[0])).boxed();
        }
        let n = leaves.len();
        (1..n)
            .prop_flat_map(move |cut| {
                let (l, r) = leaves.split_at(cut);
                (build(l.to_vec()), build(r.to_vec()))
            })
            .prop_map(|(l, r)| PlanNode::hash_join(l, r))
            .boxed()
    }

    proptest! {
        #[test]
        fn text_round_trip(plan in arb_plan(vec!["P", "OI", "O", "C"])) {
            let cat = running_example_catalog();
            let text = plan_to_text(&plan);
            prop_assert_eq!(text_to_plan(&text, &cat).unwrap(), plan);
        }

        #[test]
        fn memoized_and_naive_costs_agree(plan in arb_plan(vec!["P", "OI", "O", "C"])) {
            let cat = running_example_catalog();
            let q = running_example_query(&cat);
            let p = CardinalityProvider::Estimated;
            let bq = BoundQuery::new(&q, &cat, &p).unwrap();
            let params = CostParams::default();
            let mut eval = CostEvaluator::new(&bq, params);
            let memo = eval.cost(&plan).unwrap();
            let again = eval.cost(&plan).unwrap();
            prop_assert_eq!(memo, cost(&plan, &bq, &params).unwrap());
            prop_assert_eq!(memo, again);
        }

        #[test]
        fn reward_is_bounded_and_monotone(a in 0.0f64..2e13, b in 0.0f64..2e13) {
            let p = CostParams::default();
            let (ra, rb) = (reward_from_cost(a, &p).unwrap(), reward_from_cost(b, &p).unwrap());
            prop_assert!((p.min_reward..=0.0).contains(&ra));
            if a <= b {
                prop_assert!(ra >= rb);
            }
            if a * 1.0001 < b && b <= p.upper_bound {
                prop_assert!(ra > rb);
            }
        }
    }
}
