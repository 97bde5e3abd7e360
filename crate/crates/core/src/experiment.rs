//! Experiment orchestration: cross-validated training and evaluation,
//! box-plot summaries, latency benchmarks and table-occurrence counts.
//!
//! Cost reports are CSV preceded by `# key: value` header lines. Columns:
//! `fold,query_id,relations,planner,plan,cost,reward`. Wall-clock latency is
//! kept out of cost reports so that repeated runs produce identical files;
//! it is reported by [`latency_benchmark`] instead.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agents::{ensemble_plan, plan_query, AgentConfig, AgentKind, Policy, TrainingSetup};
use crate::catalog::{CardinalityProvider, Catalog, LookupTable};
use crate::dp::{dp_left_deep, DpOptions};
use crate::env::{EnvConfig, JoinEnv, MaskMode};
use crate::error::{Error, Result};
use crate::plancost::{reward_from_cost, CostParams};
use crate::workload::{BoundQuery, JoinQuery, RelSet, Split, Workload};

/// Planner id used for the dynamic-programming baseline.
pub const DP_PLANNER: &str = "dp-left-deep";

/// One evaluated (query, planner) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub fold: usize,
    pub query_id: String,
    pub relations: usize,
    pub planner: String,
    pub plan: String,
    pub cost: f64,
    pub reward: f64,
}

/// Box-plot statistics of one planner's costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSummary {
    pub planner: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Queries above `q3 + 1.5 * (q3 - q1)`.
    pub outliers: Vec<String>,
}

impl PlannerSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linearly interpolated percentile (`p` in `[0, 100]`) of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostReport {
    pub header: Vec<(String, String)>,
    pub records: Vec<QueryRecord>,
}

impl CostReport {
    /// Planner ids in order of first appearance.
    pub fn planners(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.planner.clone()) {
                out.push(r.planner.clone());
            }
        }
        out
    }

    pub fn records_for<'r>(&'r self, planner: &'r str) -> impl Iterator<Item = &'r QueryRecord> + 'r {
        self.records.iter().filter(move |r| r.planner == planner)
    }

    pub fn summary(&self, planner: &str) -> Option<PlannerSummary> {
        let rows: Vec<&QueryRecord> = self.records_for(planner).collect();
        if rows.is_empty() {
            return None;
        }
        let mut costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
        costs.sort_by(f64::total_cmp);
        let q1 = percentile(&costs, 25.0);
        let q3 = percentile(&costs, 75.0);
        let fence = q3 + 1.5 * (q3 - q1);
        Some(PlannerSummary {
            planner: planner.to_string(),
            count: costs.len(),
            min: costs[0],
            q1,
            median: percentile(&costs, 50.0),
            q3,
            max: costs[costs.len() - 1],
            outliers: rows
                .iter()
                .filter(|r| r.cost > fence)
                .map(|r| r.query_id.clone())
                .collect(),
        })
    }

    pub fn summaries(&self) -> Vec<PlannerSummary> {
        self.planners()
            .iter()
            .filter_map(|p| self.summary(p))
            .collect()
    }

    /// Per-query cost of `planner`, keyed by query id.
    pub fn costs(&self, planner: &str) -> BTreeMap<String, f64> {
        self.records_for(planner)
            .map(|r| (r.query_id.clone(), r.cost))
            .collect()
    }

    fn write_header(&self, out: &mut String) {
        for (k, v) in &self.header {
            out.push_str(&format!("# {k}: {v}\n"));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        self.write_header(&mut out);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fold", "query_id", "relations", "planner", "plan", "cost", "reward"])
            .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.fold.to_string(),
                r.query_id.clone(),
                r.relations.to_string(),
                r.planner.clone(),
                r.plan.clone(),
                r.cost.to_string(),
                r.reward.to_string(),
            ])
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once(": ") {
                header.push((k.to_string(), v.to_string()));
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::parse("cost report", e))?;
            let field = |idx: usize| -> Result<&str> {
                row.get(idx)
                    .ok_or_else(|| Error::parse("cost report", format!("row {}: missing column {idx}", i + 1)))
            };
            let num = |idx: usize| -> Result<f64> {
                field(idx)?
                    .parse()
                    .map_err(|e| Error::parse("cost report", format!("row {}: {e}", i + 1)))
            };
            records.push(QueryRecord {
                fold: num(0)? as usize,
                query_id: field(1)?.to_string(),
                relations: num(2)? as usize,
                planner: field(3)?.to_string(),
                plan: field(4)?.to_string(),
                cost: num(5)?,
                reward: num(6)?,
            });
        }
        Ok(Self { header, records })
    }

    /// CSV with columns `planner,count,min,q1,median,q3,max,outliers`
    /// (outlier ids separated by `;`).
    pub fn summary_csv(&self) -> String {
        let mut out = String::new();
        self.write_header(&mut out);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["planner", "count", "min", "q1", "median", "q3", "max", "outliers"])
            .expect("in-memory write");
        for s in self.summaries() {
            w.write_record([
                s.planner.clone(),
                s.count.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
                s.outliers.join(";"),
            ])
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }
}

/// Queries whose cost for `planner` lies strictly above the upper 1.5·IQR fence.
pub fn detect_outliers(report: &CostReport, planner: &str) -> Vec<String> {
    report.summary(planner).map(|s| s.outliers).unwrap_or_default()
}

/// Deterministic per-purpose seed derived from the experiment master seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Lookup cardinalities for every relation subset of every query: the
/// independence estimate times a log-normal factor `exp(sigma * z)` drawn
/// deterministically from the subset key and `seed`.
pub fn build_lookup_table(
    catalog: &Catalog,
    queries: &[JoinQuery],
    sigma: f64,
    seed: u64,
) -> Result<LookupTable> {
    let estimated = CardinalityProvider::Estimated;
    let mut table = LookupTable::new();
    let mut seen = BTreeSet::new();
    for q in queries {
        let bq = BoundQuery::new(q, catalog, &estimated)?;
        let positions: Vec<usize> = bq.relations().iter().collect();
        for bits in 1u64..(1 << positions.len()) {
            let mut set = RelSet::EMPTY;
            for (i, &p) in positions.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    set = set.union(RelSet::single(p));
                }
            }
            let key = bq.lookup_key(set);
            if !seen.insert(key.clone()) {
                continue;
            }
            let estimate = bq.cardinality(set)?;
            let factor = if sigma == 0.0 || set.len() == 1 {
                1.0
            } else {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(key.as_bytes());
                let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
                // Box-Muller.
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (sigma * z).exp()
            };
            table.insert(key, (estimate * factor).max(1.0).round())?;
        }
    }
    Ok(table)
}

/// Percentile `pct` of final costs of random valid episodes, used as the
/// reward upper bound so that rewards spread over the whole reward range.
pub fn calibrate_reward_bound(
    catalog: &Catalog,
    provider: &CardinalityProvider,
    queries: &[JoinQuery],
    episodes_per_query: usize,
    pct: f64,
    seed: u64,
) -> Result<f64> {
    if queries.is_empty() || episodes_per_query == 0 {
        return Err(Error::Config("calibration needs queries and episodes".into()));
    }
    let mut env = JoinEnv::new(catalog, provider, EnvConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costs = Vec::new();
    for q in queries {
        for _ in 0..episodes_per_query {
            let mut out = env.reset(q)?;
            while !out.done {
                let valid: Vec<usize> = out.mask.valid_actions().collect();
                out = env.step(*valid.choose(&mut rng).expect("valid action"))?;
            }
            costs.push(env.state().and_then(|s| s.final_cost()).expect("terminal"));
        }
    }
    costs.sort_by(f64::total_cmp);
    Ok(percentile(&costs, pct).max(1.0))
}

/// One agent of an experiment: its configuration and the seeds of its members.
#[derive(Debug, Clone)]
pub struct AgentRun {
    pub name: String,
    pub config: AgentConfig,
    pub seeds: Vec<u64>,
}

/// Inputs of [`run_experiment`].
#[derive(Debug, Clone, Copy)]
pub struct ExperimentSpec<'a> {
    pub catalog: &'a Catalog,
    pub provider: &'a CardinalityProvider,
    pub params: CostParams,
    pub workload: &'a Workload,
    pub split: &'a Split,
    pub agents: &'a [AgentRun],
    /// Add an ensemble planner per agent when it has more than one member.
    pub ensemble: bool,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    /// `(agent name, member policies)` in agent order.
    pub policies: Vec<(String, Vec<Policy>)>,
    pub report: CostReport,
    pub invalid_actions: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub folds: Vec<FoldResult>,
    /// Every query's first test-fold evaluation, once per planner.
    pub combined: CostReport,
}

/// Planner id of member `index` of agent `name`.
pub fn member_planner(name: &str, index: usize) -> String {
    format!("{name}-seed{index}")
}

pub fn ensemble_planner(name: &str) -> String {
    format!("{name}-ensemble")
}

/// Trains every agent member on each fold's training queries and evaluates
/// members, ensembles and the DP baseline on the fold's test queries.
/// Training jobs run in parallel on the current rayon pool; results are
/// assembled in a fixed order.
pub fn run_experiment(spec: &ExperimentSpec<'_>) -> Result<ExperimentResult> {
    spec.split.validate(spec.workload, false)?;
    spec.params.validate()?;
    let mut jobs = Vec::new();
    for (f, _) in spec.split.folds.iter().enumerate() {
        for (a, agent) in spec.agents.iter().enumerate() {
            for (m, &seed) in agent.seeds.iter().enumerate() {
                jobs.push((f, a, m, seed));
            }
        }
    }
    let fold_queries: Vec<(Vec<JoinQuery>, Vec<JoinQuery>)> = spec
        .split
        .folds
        .iter()
        .map(|fold| Ok((spec.workload.select(&fold.train)?, spec.workload.select(&fold.test)?)))
        .collect::<Result<_>>()?;

    let trained: Vec<Result<(usize, usize, usize, crate::agents::TrainOutcome)>> = jobs
        .par_iter()
        .map(|&(f, a, m, seed)| {
            let setup = TrainingSetup {
                catalog: spec.catalog,
                provider: spec.provider,
                params: spec.params,
                queries: &fold_queries[f].0,
            };
            let agent = &spec.agents[a];
            let outcome = agent.config.train(&setup, seed).map_err(|e| {
                e.context(format!("training {} member {m} (seed {seed}) on fold {f}", agent.name))
            })?;
            Ok((f, a, m, outcome))
        })
        .collect();

    let mut folds: Vec<FoldResult> = (0..spec.split.folds.len())
        .map(|f| FoldResult {
            fold: f,
            policies: spec.agents.iter().map(|a| (a.name.clone(), Vec::new())).collect(),
            report: CostReport::default(),
            invalid_actions: 0,
        })
        .collect();
    for t in trained {
        let (f, a, _, outcome) = t?;
        folds[f].invalid_actions += outcome.invalid_actions;
        folds[f].policies[a].1.push(outcome.policy);
    }

    let header = vec![
        ("master_seed".to_string(), spec.master_seed.to_string()),
        ("workload".to_string(), spec.workload.name.clone()),
        ("catalog_digest".to_string(), spec.catalog.digest()),
        ("cardinality".to_string(), format!("{:?}", spec.provider.mode()).to_lowercase()),
        ("upper_bound".to_string(), spec.params.upper_bound.to_string()),
        (
            "agents".to_string(),
            spec.agents
                .iter()
                .map(|a| format!("{}={}", a.name, &a.config.digest()[..12]))
                .collect::<Vec<_>>()
                .join(","),
        ),
    ];
    let fold_reports: Vec<Result<CostReport>> = folds
        .par_iter()
        .map(|fr| evaluate_fold(spec, fr, &fold_queries[fr.fold].1, &header))
        .collect();
    for (fr, rep) in folds.iter_mut().zip(fold_reports) {
        fr.report = rep?;
    }

    let mut combined = CostReport {
        header: header.clone(),
        records: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for fr in &folds {
        for r in &fr.report.records {
            if seen.insert((r.planner.clone(), r.query_id.clone())) {
                combined.records.push(r.clone());
            }
        }
    }
    Ok(ExperimentResult { folds, combined })
}

fn evaluate_fold(
    spec: &ExperimentSpec<'_>,
    fr: &FoldResult,
    test: &[JoinQuery],
    header: &[(String, String)],
) -> Result<CostReport> {
    let mut header = header.to_vec();
    header.push(("fold".to_string(), fr.fold.to_string()));
    let mut report = CostReport {
        header,
        records: Vec::new(),
    };
    let record = |q: &JoinQuery, planner: String, plan: String, cost: f64| -> Result<QueryRecord> {
        Ok(QueryRecord {
            fold: fr.fold,
            query_id: q.id.clone(),
            relations: q.relation_count(),
            planner,
            plan,
            cost,
            reward: reward_from_cost(cost, &spec.params)?,
        })
    };
    for q in test {
        let bq = BoundQuery::new(q, spec.catalog, spec.provider)?;
        let dp = dp_left_deep(&bq, &spec.params, DpOptions::default())?;
        report.records.push(record(q, DP_PLANNER.into(), dp.plan.to_string(), dp.cost)?);
    }
    for (name, members) in &fr.policies {
        if members.is_empty() {
            continue;
        }
        let mask_mode = members[0].header.mask_mode;
        let mut env = JoinEnv::new(
            spec.catalog,
            spec.provider,
            EnvConfig {
                params: spec.params,
                mask_mode,
            },
        )?;
        for (m, policy) in members.iter().enumerate() {
            for q in test {
                let planned = plan_query(policy, q, &mut env)?;
                report
                    .records
                    .push(record(q, member_planner(name, m), planned.plan.to_string(), planned.cost)?);
            }
        }
        if spec.ensemble && members.len() > 1 {
            for q in test {
                let e = ensemble_plan(members, q, &mut env)?;
                report
                    .records
                    .push(record(q, ensemble_planner(name), e.plan.to_string(), e.cost)?);
            }
        }
    }
    Ok(report)
}

/// Planner measured by [`latency_benchmark`].
#[derive(Debug, Clone, Copy)]
pub enum LatencyPlanner<'p> {
    Dp,
    Learned { name: &'p str, policy: &'p Policy },
}

impl LatencyPlanner<'_> {
    pub fn name(&self) -> String {
        match self {
            LatencyPlanner::Dp => DP_PLANNER.to_string(),
            LatencyPlanner::Learned { name, .. } => name.to_string(),
        }
    }
}

/// Planning latency of one planner for queries of one relation count.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyBucket {
    pub planner: String,
    pub relations: usize,
    pub queries: usize,
    pub mean: Duration,
    pub median: Duration,
}

/// Least-squares line `latency_us = intercept + slope * relations`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub planner: String,
    pub intercept_us: f64,
    pub slope_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub buckets: Vec<LatencyBucket>,
    pub fits: Vec<LinearFit>,
    /// `(planner, relations, median / median at previous relation count)`.
    pub ratios: Vec<(String, usize, f64)>,
}

impl LatencyReport {
    pub fn median(&self, planner: &str, relations: usize) -> Option<Duration> {
        self.buckets
            .iter()
            .find(|b| b.planner == planner && b.relations == relations)
            .map(|b| b.median)
    }

    /// Median latency ratio between two relation counts.
    pub fn ratio(&self, planner: &str, from: usize, to: usize) -> Option<f64> {
        let a = self.median(planner, from)?.as_secs_f64();
        let b = self.median(planner, to)?.as_secs_f64();
        (a > 0.0).then(|| b / a)
    }

    /// CSV with columns `planner,relations,queries,mean_us,median_us`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["planner", "relations", "queries", "mean_us", "median_us"])
            .expect("in-memory write");
        for b in &self.buckets {
            w.write_record([
                b.planner.clone(),
                b.relations.to_string(),
                b.queries.to_string(),
                format!("{:.3}", b.mean.as_secs_f64() * 1e6),
                format!("{:.3}", b.median.as_secs_f64() * 1e6),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Measures planning latency per relation count. Each query is planned
/// `repetitions` times and the per-query median is used; buckets report the
/// median and mean over their queries.
pub fn latency_benchmark(
    catalog: &Catalog,
    provider: &CardinalityProvider,
    params: CostParams,
    planners: &[LatencyPlanner<'_>],
    queries: &[JoinQuery],
    repetitions: usize,
) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::Config("latency benchmark needs at least one repetition".into()));
    }
    let mut by_k: BTreeMap<usize, Vec<&JoinQuery>> = BTreeMap::new();
    for q in queries {
        by_k.entry(q.relation_count()).or_default().push(q);
    }
    if by_k.len() < 4 {
        return Err(Error::Config(format!(
            "latency benchmark needs at least 4 distinct relation counts, got {}",
            by_k.len()
        )));
    }
    let mut buckets = Vec::new();
    let mut fits = Vec::new();
    let mut ratios = Vec::new();
    for planner in planners {
        let mut env = match planner {
            LatencyPlanner::Dp => None,
            LatencyPlanner::Learned { policy, .. } => Some(JoinEnv::new(
                catalog,
                provider,
                EnvConfig {
                    params,
                    mask_mode: policy.header.mask_mode,
                },
            )?),
        };
        let mut points = Vec::new();
        let mut prev: Option<Duration> = None;
        for (&k, qs) in &by_k {
            let mut per_query = Vec::with_capacity(qs.len());
            for q in qs {
                let mut times = Vec::with_capacity(repetitions);
                for _ in 0..repetitions {
                    let started = Instant::now();
                    match (planner, env.as_mut()) {
                        (LatencyPlanner::Learned { policy, .. }, Some(env)) => {
                            std::hint::black_box(plan_query(policy, q, env)?);
                        }
                        _ => {
                            let bq = BoundQuery::new(q, catalog, provider)?;
                            std::hint::black_box(dp_left_deep(&bq, &params, DpOptions::default())?);
                        }
                    }
                    times.push(started.elapsed());
                }
                times.sort();
                per_query.push(times[times.len() / 2]);
            }
            per_query.sort();
            let median = per_query[per_query.len() / 2];
            let mean = per_query.iter().sum::<Duration>() / per_query.len() as u32;
            if let Some(p) = prev {
                let r = if p.is_zero() {
                    f64::INFINITY
                } else {
                    median.as_secs_f64() / p.as_secs_f64()
                };
                ratios.push((planner.name(), k, r));
            }
            prev = Some(median);
            points.push((k as f64, median.as_secs_f64() * 1e6));
            buckets.push(LatencyBucket {
                planner: planner.name(),
                relations: k,
                queries: qs.len(),
                mean,
                median,
            });
        }
        if matches!(planner, LatencyPlanner::Learned { .. }) {
            let (intercept_us, slope_us) = least_squares(&points);
            fits.push(LinearFit {
                planner: planner.name(),
                intercept_us,
                slope_us,
            });
        }
    }
    Ok(LatencyReport {
        buckets,
        fits,
        ratios,
    })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (my - slope * mx, slope)
}

/// Table access counts per partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceReport {
    /// `(table, train, test, outlier)` in catalog order.
    pub rows: Vec<(String, usize, usize, usize)>,
}

impl OccurrenceReport {
    /// CSV with columns `table,train,test,outlier`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table", "train", "test", "outlier"])
            .expect("in-memory write");
        for (t, a, b, c) in &self.rows {
            w.write_record([t.clone(), a.to_string(), b.to_string(), c.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Counts how many queries reference each table in the training sets, the
/// test sets (summed over folds) and the given outlier queries.
pub fn occurrence_report(
    catalog: &Catalog,
    workload: &Workload,
    split: &Split,
    outliers: &[String],
) -> Result<OccurrenceReport> {
    let count = |ids: &[String], into: &mut BTreeMap<String, usize>| -> Result<()> {
        for q in workload.select(ids)? {
            for r in &q.relations {
                *into.entry(r.clone()).or_default() += 1;
            }
        }
        Ok(())
    };
    let (mut train, mut test, mut out) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for fold in &split.folds {
        count(&fold.train, &mut train)?;
        count(&fold.test, &mut test)?;
    }
    count(outliers, &mut out)?;
    let get = |m: &BTreeMap<String, usize>, t: &str| m.get(t).copied().unwrap_or(0);
    Ok(OccurrenceReport {
        rows: catalog
            .tables()
            .iter()
            .map(|t| (t.name.clone(), get(&train, &t.name), get(&test, &t.name), get(&out, &t.name)))
            .collect(),
    })
}

/// Summary line per planner, for terminal output.
pub fn format_summaries(report: &CostReport) -> String {
    let mut out = format!(
        "{:<24} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
        "planner", "count", "min", "q1", "median", "q3", "max", "outliers"
    );
    for s in report.summaries() {
        out.push_str(&format!(
            "{:<24} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}\n",
            s.planner,
            s.count,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max,
            s.outliers.len()
        ));
    }
    out
}

/// Mask mode shared by a set of policies, if they agree.
pub fn common_mask_mode(policies: &[Policy]) -> Option<MaskMode> {
    let first = policies.first()?.header.mask_mode;
    policies
        .iter()
        .all(|p| p.header.mask_mode == first)
        .then_some(first)
}

/// Kinds present among `policies`, sorted.
pub fn policy_kinds(policies: &[Policy]) -> Vec<AgentKind> {
    let set: BTreeSet<AgentKind> = policies.iter().map(|p| p.kind()).collect();
    set.into_iter().collect()
}
