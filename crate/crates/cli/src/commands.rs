use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use log::info;
use serde::Deserialize;

use joinrl::agents::{default_preset, ensemble_plan, plan_query, AgentKind, TrainingSetup};
use joinrl::catalog::{generate_synthetic_catalog, load_catalog};
use joinrl::dp::{exhaustive_bushy, exhaustive_left_deep, DpResult};
use joinrl::experiment::{
    build_lookup_table, calibrate_reward_bound, common_mask_mode, derive_seed, detect_outliers,
    format_summaries, latency_benchmark, occurrence_report, run_experiment, AgentRun, CostReport,
    ExperimentSpec, LatencyPlanner, QueryRecord, DP_PLANNER,
};
use joinrl::workload::{
    generate_synthetic_workload, load_workload, make_curated_holdout, make_curated_split,
    make_overlapping_folds, make_random_folds, SchemaGraph,
};
use joinrl::{
    dp_left_deep, preset, reward_from_cost, BoundQuery, CardinalityProvider, Catalog, CostParams,
    DpOptions, EnvConfig, JoinEnv, JoinQuery, LookupTable, Policy, Split, Workload,
};

use crate::config::ExperimentFile;
use crate::{
    usage, DataArgs, DpArgs, EvalArgs, ExperimentArgs, GenArgs, LatencyArgs, ReportArgs,
    SearchSpace, SplitMode, TrainArgs,
};

/// Episodes per training query when calibrating the reward upper bound.
const CALIBRATION_EPISODES: usize = 20;
/// Calibration seed for `train`, independent of the agent seed so that
/// policies trained on the same data share one reward bound.
const CALIBRATION_SEED: u64 = 0;

struct Data {
    catalog: Catalog,
    workload: Workload,
    provider: CardinalityProvider,
    split: Option<Split>,
    fold: Option<usize>,
}

#[derive(Clone, Copy)]
enum Part {
    Train,
    Test,
}

impl Data {
    fn load(args: &DataArgs) -> anyhow::Result<Self> {
        let catalog = load_catalog(&args.catalog)?;
        let workload = load_workload(&args.workload, &catalog)?;
        let provider = match &args.lookup {
            Some(p) => CardinalityProvider::Lookup(LookupTable::load(p)?),
            None => CardinalityProvider::Estimated,
        };
        let split = args.split.as_deref().map(load_split).transpose()?;
        if let (Some(s), Some(f)) = (&split, args.fold) {
            if f >= s.folds.len() {
                return Err(usage(format!("fold {f} out of range; the split has {} folds", s.folds.len())));
            }
        }
        if let Some(s) = &split {
            s.validate(&workload, false)?;
        }
        Ok(Self {
            catalog,
            workload,
            provider,
            split,
            fold: args.fold,
        })
    }

    /// Queries of one side of the selected fold, or the whole workload.
    fn queries(&self, part: Part) -> anyhow::Result<Vec<JoinQuery>> {
        match (&self.split, self.fold) {
            (Some(s), Some(f)) => {
                let ids = match part {
                    Part::Train => &s.folds[f].train,
                    Part::Test => &s.folds[f].test,
                };
                Ok(self.workload.select(ids)?)
            }
            _ => Ok(self.workload.queries.clone()),
        }
    }

    fn header(&self, command: &str) -> Vec<(String, String)> {
        let mut h = vec![
            ("command".to_string(), command.to_string()),
            ("workload".to_string(), self.workload.name.clone()),
            ("catalog_digest".to_string(), self.catalog.digest()),
            (
                "cardinality".to_string(),
                format!("{:?}", self.provider.mode()).to_lowercase(),
            ),
        ];
        if let Some(f) = self.fold {
            h.push(("fold".to_string(), f.to_string()));
        }
        h
    }
}

fn load_split(path: &Path) -> anyhow::Result<Split> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Split::from_json_str(&text).map_err(|e| e.context(path.display().to_string()))?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn make_split(
    mode: SplitMode,
    workload: &Workload,
    catalog: &Catalog,
    folds: usize,
    test_size: Option<usize>,
    seed: u64,
) -> anyhow::Result<Split> {
    let need_size = || test_size.ok_or_else(|| usage(format!("split mode {mode:?} needs a test size")));
    Ok(match mode {
        SplitMode::Random => make_random_folds(workload, folds, seed)?,
        SplitMode::Curated => make_curated_split(workload, catalog, folds, seed)?,
        SplitMode::Overlap => make_overlapping_folds(workload, folds, need_size()?, seed)?,
        SplitMode::Holdout => make_curated_holdout(workload, catalog, need_size()?, seed)?,
    })
}

pub fn gen(args: &GenArgs, out: &Path) -> anyhow::Result<()> {
    let catalog = generate_synthetic_catalog(args.tables, args.seed)?;
    let graph = SchemaGraph::from_naming(&catalog);
    let min = args.min_relations.unwrap_or(args.tables.min(3));
    let max = args.max_relations.unwrap_or(args.tables.min(8));
    let workload = generate_synthetic_workload(&catalog, &graph, args.queries, min, max, args.seed)?;
    write(&out.join("catalog.json"), catalog.to_json_string())?;
    write(&out.join("workload.json"), workload.to_json_string())?;
    println!(
        "wrote {} tables and {} queries ({min}..={max} relations) to {}",
        catalog.table_count(),
        workload.len(),
        out.display()
    );
    if let Some(sigma) = args.lookup_sigma {
        let lookup = build_lookup_table(&catalog, &workload.queries, sigma, args.seed)?;
        write(&out.join("lookup.txt"), lookup.to_text())?;
        println!("wrote {} lookup cardinalities", lookup.len());
    }
    if let Some(mode) = args.split {
        let split = make_split(mode, &workload, &catalog, args.folds, args.test_size, args.seed)?;
        write(&out.join("split.json"), split.to_json_string())?;
        println!("wrote a {}-fold split", split.folds.len());
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    agent: Option<String>,
    preset: Option<String>,
    seed: Option<u64>,
    upper_bound: Option<f64>,
    #[serde(default)]
    set: Vec<String>,
}

fn upper_bound(
    explicit: Option<f64>,
    percentile: f64,
    data: &Data,
    queries: &[JoinQuery],
    seed: u64,
) -> anyhow::Result<f64> {
    match explicit {
        Some(ub) => Ok(ub),
        None => {
            let ub = calibrate_reward_bound(
                &data.catalog,
                &data.provider,
                queries,
                CALIBRATION_EPISODES,
                percentile,
                seed,
            )?;
            info!("calibrated reward upper bound {ub:e} at percentile {percentile}");
            Ok(ub)
        }
    }
}

pub fn train(args: &TrainArgs, out: &Path) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TrainFile>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainFile::default(),
    };
    let agent = args
        .agent
        .clone()
        .or(file.agent)
        .ok_or_else(|| usage("no agent given (--agent dqn|ddqn|ppo)"))?;
    let kind: AgentKind = agent.parse()?;
    let preset_name = args
        .preset
        .clone()
        .or(file.preset)
        .unwrap_or_else(|| default_preset(kind).to_string());
    let mut config = preset(&preset_name)?;
    if config.kind() != kind {
        return Err(usage(format!(
            "preset `{preset_name}` configures {}, not {kind}",
            config.kind()
        )));
    }
    for o in file.set.iter().chain(&args.overrides) {
        config.apply_override(o)?;
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let data = Data::load(&args.data)?;
    let queries = data.queries(Part::Train)?;
    let ub = upper_bound(
        args.bound.upper_bound.or(file.upper_bound),
        args.bound.calibrate_percentile,
        &data,
        &queries,
        CALIBRATION_SEED,
    )?;
    let setup = TrainingSetup {
        catalog: &data.catalog,
        provider: &data.provider,
        params: CostParams::default().with_upper_bound(ub),
        queries: &queries,
    };
    setup.params.validate()?;
    let started = Instant::now();
    info!("training {kind} ({preset_name}) for {} steps on {} queries", config.total_steps(), queries.len());
    let outcome = config.train(&setup, seed)?;
    let policy_path = args
        .output
        .clone()
        .unwrap_or_else(|| out.join(format!("{kind}-seed{seed}.policy")));
    write(&policy_path, outcome.policy.to_bytes())?;
    let metrics_path = policy_path.with_extension("metrics.csv");
    write(&metrics_path, outcome.metrics.to_csv())?;
    let last_reward = outcome
        .metrics
        .rows
        .iter()
        .rev()
        .map(|r| r.mean_episode_reward)
        .find(|r| r.is_finite());
    println!(
        "trained {kind} ({preset_name}, seed {seed}) for {} steps, {} episodes in {:.1}s; final mean reward {}",
        outcome.policy.header.steps,
        outcome.episodes,
        started.elapsed().as_secs_f64(),
        last_reward.map_or("n/a".to_string(), |r| format!("{r:.3}"))
    );
    println!("policy: {}", policy_path.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

/// Loads policies, checks them against the catalog and names them by file stem.
fn load_policies(paths: &[PathBuf], catalog: &Catalog) -> anyhow::Result<Vec<(String, Policy)>> {
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for path in paths {
        let policy = Policy::load(path)?;
        policy
            .check_catalog(catalog)
            .map_err(|e| e.context(path.display().to_string()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into());
        let mut name = stem.clone();
        let mut n = 2;
        while !used.insert(name.clone()) {
            name = format!("{stem}-{n}");
            n += 1;
        }
        out.push((name, policy));
    }
    Ok(out)
}

/// Cost parameters shared by all policies.
fn shared_params(policies: &[(String, Policy)]) -> anyhow::Result<Option<CostParams>> {
    let Some((_, first)) = policies.first() else {
        return Ok(None);
    };
    for (name, p) in policies {
        if p.header.cost_params != first.header.cost_params {
            return Err(usage(format!(
                "policy `{name}` was trained with different cost parameters than `{}`",
                policies[0].0
            )));
        }
    }
    Ok(Some(first.header.cost_params))
}

fn policy_header(policies: &[(String, Policy)]) -> String {
    policies
        .iter()
        .map(|(n, p)| format!("{n}={}:{}@{}", p.kind(), &p.header.config_digest[..12], p.header.seed))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn eval(args: &EvalArgs, out: &Path, compare: bool) -> anyhow::Result<()> {
    let command = if compare { "compare" } else { "eval" };
    let data = Data::load(&args.data)?;
    let policies = load_policies(&args.policies, &data.catalog)?;
    let params = shared_params(&policies)?.expect("at least one policy");
    let queries = data.queries(Part::Test)?;
    let fold = data.fold.unwrap_or(0);
    let record = |q: &JoinQuery, planner: &str, plan: String, cost: f64| -> anyhow::Result<QueryRecord> {
        Ok(QueryRecord {
            fold,
            query_id: q.id.clone(),
            relations: q.relation_count(),
            planner: planner.to_string(),
            plan,
            cost,
            reward: reward_from_cost(cost, &params)?,
        })
    };
    let mut header = data.header(command);
    header.push(("upper_bound".into(), params.upper_bound.to_string()));
    header.push(("policies".into(), policy_header(&policies)));
    let mut report = CostReport {
        header,
        records: Vec::new(),
    };
    if compare {
        for q in &queries {
            let bq = BoundQuery::new(q, &data.catalog, &data.provider)?;
            let dp = dp_left_deep(&bq, &params, DpOptions::default())?;
            report.records.push(record(q, DP_PLANNER, dp.plan.to_string(), dp.cost)?);
        }
    }
    for (name, policy) in &policies {
        let mut env = JoinEnv::new(
            &data.catalog,
            &data.provider,
            EnvConfig {
                params,
                mask_mode: policy.header.mask_mode,
            },
        )?;
        for q in &queries {
            let planned = plan_query(policy, q, &mut env)?;
            report.records.push(record(q, name, planned.plan.to_string(), planned.cost)?);
        }
    }
    if (compare || args.ensemble) && policies.len() > 1 {
        let members: Vec<Policy> = policies.iter().map(|(_, p)| p.clone()).collect();
        let mask_mode = common_mask_mode(&members)
            .ok_or_else(|| usage("ensemble members use different action-mask modes"))?;
        let mut env = JoinEnv::new(&data.catalog, &data.provider, EnvConfig { params, mask_mode })?;
        for q in &queries {
            let e = ensemble_plan(&members, q, &mut env)?;
            report.records.push(record(q, "ensemble", e.plan.to_string(), e.cost)?);
        }
    }
    let path = args.output.clone().unwrap_or_else(|| out.join(format!("{command}.csv")));
    write(&path, report.to_csv())?;
    print!("{}", format_summaries(&report));
    println!("report: {}", path.display());
    Ok(())
}

pub fn latency(args: &LatencyArgs, out: &Path) -> anyhow::Result<()> {
    let data = Data::load(&args.data)?;
    let policies = load_policies(&args.policies, &data.catalog)?;
    let params = shared_params(&policies)?.unwrap_or_default();
    let mut planners = Vec::new();
    if !args.no_dp {
        planners.push(LatencyPlanner::Dp);
    }
    for (name, policy) in &policies {
        planners.push(LatencyPlanner::Learned { name, policy });
    }
    if planners.is_empty() {
        return Err(usage("nothing to measure: pass --policy or drop --no-dp"));
    }
    let queries = data.queries(Part::Test)?;
    let report = latency_benchmark(&data.catalog, &data.provider, params, &planners, &queries, args.repetitions)?;
    let path = args.output.clone().unwrap_or_else(|| out.join("latency.csv"));
    write(&path, report.to_csv())?;
    println!("{:<24} {:>9} {:>8} {:>14}", "planner", "relations", "queries", "median_us");
    for b in &report.buckets {
        println!(
            "{:<24} {:>9} {:>8} {:>14.1}",
            b.planner,
            b.relations,
            b.queries,
            b.median.as_secs_f64() * 1e6
        );
    }
    for (planner, k, r) in &report.ratios {
        println!("{planner}: ratio to previous bucket at {k} relations {r:.2}");
    }
    for f in &report.fits {
        println!(
            "{}: latency_us = {:.2} + {:.2} * relations",
            f.planner, f.intercept_us, f.slope_us
        );
    }
    println!("report: {}", path.display());
    Ok(())
}

pub fn dp(args: &DpArgs, out: &Path) -> anyhow::Result<()> {
    let data = Data::load(&args.data)?;
    let params = CostParams::default().with_upper_bound(args.upper_bound);
    params.validate()?;
    let queries = match &args.query {
        Some(id) => vec![data
            .workload
            .query(id)
            .cloned()
            .ok_or_else(|| usage(format!("unknown query `{id}`")))?],
        None => data.queries(Part::Test)?,
    };
    let planner = match args.space {
        SearchSpace::LeftDeep => DP_PLANNER,
        SearchSpace::ExhaustiveLeftDeep => "exhaustive-left-deep",
        SearchSpace::Bushy => "exhaustive-bushy",
    };
    let mut header = data.header("dp");
    header.push(("upper_bound".into(), params.upper_bound.to_string()));
    header.push(("allow_cross".into(), args.allow_cross.to_string()));
    let mut report = CostReport {
        header,
        records: Vec::new(),
    };
    for q in &queries {
        let bq = BoundQuery::new(q, &data.catalog, &data.provider)?;
        let result: DpResult = match args.space {
            SearchSpace::LeftDeep => dp_left_deep(
                &bq,
                &params,
                DpOptions {
                    allow_cross: args.allow_cross,
                    ..DpOptions::default()
                },
            )?,
            SearchSpace::ExhaustiveLeftDeep => exhaustive_left_deep(&bq, &params)?,
            SearchSpace::Bushy => exhaustive_bushy(&bq, &params)?,
        };
        println!(
            "{:<8} {:>2} {:>14.6e} {:>9} {:>10.3}ms  {}",
            q.id,
            q.relation_count(),
            result.cost,
            result.expanded_states,
            result.elapsed.as_secs_f64() * 1e3,
            result.plan
        );
        report.records.push(QueryRecord {
            fold: data.fold.unwrap_or(0),
            query_id: q.id.clone(),
            relations: q.relation_count(),
            planner: planner.to_string(),
            plan: result.plan.to_string(),
            cost: result.cost,
            reward: reward_from_cost(result.cost, &params)?,
        });
    }
    let path = args.output.clone().unwrap_or_else(|| out.join("dp.csv"));
    write(&path, report.to_csv())?;
    println!("report: {}", path.display());
    Ok(())
}

pub fn report(args: &ReportArgs, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let report = CostReport::from_csv(&text).map_err(|e| e.context(args.input.display().to_string()))?;
    if report.records.is_empty() {
        return Err(usage(format!("{} has no records", args.input.display())));
    }
    print!("{}", format_summaries(&report));
    for s in report.summaries() {
        if !s.outliers.is_empty() {
            println!("{} outliers: {}", s.planner, s.outliers.join(", "));
        }
    }
    let path = out.join("summary.csv");
    write(&path, report.summary_csv())?;
    println!("summary: {}", path.display());
    if let (Some(cat), Some(wl), Some(sp), Some(planner)) =
        (&args.catalog, &args.workload, &args.split, &args.planner)
    {
        if report.summary(planner).is_none() {
            return Err(usage(format!("planner `{planner}` not in the report")));
        }
        let catalog = load_catalog(cat)?;
        let workload = load_workload(wl, &catalog)?;
        let split = load_split(sp)?;
        let outliers = detect_outliers(&report, planner);
        let occ = occurrence_report(&catalog, &workload, &split, &outliers)?;
        let path = out.join("occurrence.csv");
        write(&path, occ.to_csv())?;
        println!("occurrence: {}", path.display());
    }
    Ok(())
}

pub fn experiment(args: &ExperimentArgs, out: &Path) -> anyhow::Result<()> {
    let mut file = ExperimentFile::load(&args.config)?;
    if let Some(seed) = args.master_seed {
        file.master_seed = seed;
    }
    if let Some(e) = args.ensemble {
        file.ensemble = e;
    }
    let data = Data::load(&DataArgs {
        catalog: file.catalog.clone(),
        workload: file.workload.clone(),
        lookup: file.lookup.clone(),
        split: None,
        fold: None,
    })?;
    let master = file.master_seed;
    let split = match file.split.mode.mode() {
        Some(mode) => make_split(
            mode,
            &data.workload,
            &data.catalog,
            file.split.folds,
            file.split.test_size,
            master,
        )?,
        None => load_split(file.split.path.as_deref().expect("validated"))?,
    };
    // The bound is calibrated on every query that some fold trains on.
    let train_ids: BTreeSet<String> = split.folds.iter().flat_map(|f| f.train.iter().cloned()).collect();
    let train_ids: Vec<String> = train_ids.into_iter().collect();
    let train = data.workload.select(&train_ids)?;
    let ub = upper_bound(file.upper_bound, file.calibrate_percentile, &data, &train, master)?;
    let seeds_for = |n: usize| (0..n as u64).map(|i| derive_seed(master, &[i])).collect::<Vec<_>>();
    let agents = file
        .agents
        .iter()
        .map(|a| {
            let mut config = preset(&a.preset)?;
            for o in &a.set {
                config.apply_override(o)?;
            }
            Ok(AgentRun {
                name: a.name.clone(),
                config,
                seeds: seeds_for(a.seeds),
            })
        })
        .collect::<joinrl::Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        catalog: &data.catalog,
        provider: &data.provider,
        params: CostParams::default().with_upper_bound(ub),
        workload: &data.workload,
        split: &split,
        agents: &agents,
        ensemble: file.ensemble,
        master_seed: master,
    };
    let started = Instant::now();
    let result = run_experiment(&spec)?;
    info!("experiment finished in {:.1}s", started.elapsed().as_secs_f64());

    write(&out.join("split.json"), split.to_json_string())?;
    write(
        &out.join("experiment.toml"),
        toml::to_string(&file).context("serializing the resolved experiment")?,
    )?;
    for fr in &result.folds {
        write(&out.join(format!("fold-{}.csv", fr.fold)), fr.report.to_csv())?;
        for (name, members) in &fr.policies {
            for (i, p) in members.iter().enumerate() {
                let path = out
                    .join("policies")
                    .join(format!("{name}-seed{i}-fold{}.policy", fr.fold));
                write(&path, p.to_bytes())?;
            }
        }
        if fr.invalid_actions > 0 {
            println!("fold {}: {} invalid actions during training", fr.fold, fr.invalid_actions);
        }
    }
    write(&out.join("report.csv"), result.combined.to_csv())?;
    write(&out.join("summary.csv"), result.combined.summary_csv())?;
    print!("{}", format_summaries(&result.combined));
    println!("reports: {}", out.display());
    Ok(())
}
