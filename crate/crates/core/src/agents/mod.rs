//! Learned join-order planners: training, presets, greedy inference and
//! ensembles.

pub mod dqn;
pub mod policy;
pub mod ppo;
pub mod replay;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::{CardinalityProvider, Catalog};
use crate::env::{EnvConfig, JoinEnv, MaskMode};
use crate::error::{Error, Result};
use crate::plancost::{CostParams, PlanNode};
use crate::workload::JoinQuery;

pub use dqn::{train_dqn, DqnConfig, DqnVariant};
pub use policy::{AgentKind, Policy};
pub use ppo::{train_ppo, PpoConfig};

/// Everything a trainer needs to build environments for its queries.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSetup<'a> {
    pub catalog: &'a Catalog,
    pub provider: &'a CardinalityProvider,
    pub params: CostParams,
    pub queries: &'a [JoinQuery],
}

impl<'a> TrainingSetup<'a> {
    pub fn make_env(&self, mask_mode: MaskMode) -> Result<JoinEnv<'a>> {
        JoinEnv::new(
            self.catalog,
            self.provider,
            EnvConfig {
                params: self.params,
                mask_mode,
            },
        )
    }
}

/// One row of the training-metrics series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    /// Mean loss over the updates since the previous row (NaN if none).
    pub loss: f64,
    /// Mean terminal reward of episodes finished since the previous row.
    pub mean_episode_reward: f64,
    /// Epsilon for Q-learning, policy entropy for PPO.
    pub exploration: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMetrics {
    pub rows: Vec<MetricRow>,
}

impl TrainingMetrics {
    /// CSV with columns `step,loss,mean_episode_reward,exploration`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "loss", "mean_episode_reward", "exploration"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.loss.to_string(),
                r.mean_episode_reward.to_string(),
                r.exploration.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: TrainingMetrics,
    /// Executed actions that the mask marked invalid; always zero.
    pub invalid_actions: u64,
    pub episodes: u64,
}

/// Configuration of any of the three agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum AgentConfig {
    Dqn(DqnConfig),
    Ppo(PpoConfig),
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] = [
    "dqn-paper",
    "ddqn-paper",
    "ppo-paper",
    "dqn-desk",
    "ddqn-desk",
    "ppo-desk",
];

/// Named hyper-parameter sets. Budgets are environment steps.
pub fn preset(name: &str) -> Result<AgentConfig> {
    let vanilla = |total, starts, target| DqnConfig {
        variant: DqnVariant::Vanilla,
        total_steps: total,
        learning_starts: starts,
        target_update: target,
        ..DqnConfig::default()
    };
    Ok(match name {
        "dqn-paper" => AgentConfig::Dqn(vanilla(4_000, 1_000, 500)),
        "dqn-desk" => AgentConfig::Dqn(vanilla(20_000, 5_000, 2_500)),
        "ddqn-paper" => AgentConfig::Dqn(DqnConfig {
            total_steps: 320_000,
            learning_starts: 160_000,
            target_update: 32_000,
            hidden: vec![6272, 1568],
            ..DqnConfig::default()
        }),
        "ddqn-desk" => AgentConfig::Dqn(DqnConfig::default()),
        "ppo-paper" | "ppo-desk" => AgentConfig::Ppo(PpoConfig::default()),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

/// Default preset name for an agent kind.
pub fn default_preset(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Dqn => "dqn-desk",
        AgentKind::Ddqn => "ddqn-desk",
        AgentKind::Ppo => "ppo-desk",
    }
}

impl AgentConfig {
    pub fn kind(&self) -> AgentKind {
        match self {
            AgentConfig::Dqn(c) => c.kind(),
            AgentConfig::Ppo(_) => AgentKind::Ppo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AgentConfig::Dqn(c) => c.validate(),
            AgentConfig::Ppo(c) => c.validate(),
        }
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            AgentConfig::Dqn(c) => c.total_steps,
            AgentConfig::Ppo(c) => c.total_steps,
        }
    }

    /// Sets one field from `key=value`. Values are parsed as JSON when
    /// possible (`3e-4`, `true`, `[128,128]`) and as strings otherwise.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let mut json = serde_json::to_value(&*self).expect("configs serialize");
        let obj = json.as_object_mut().expect("configs are objects");
        if key == "algorithm" || !obj.contains_key(key) {
            return Err(Error::Config(format!(
                "unknown setting `{key}` for {}",
                self.kind()
            )));
        }
        let parsed = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        let updated: AgentConfig = serde_json::from_value(json)
            .map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn digest(&self) -> String {
        match self {
            AgentConfig::Dqn(c) => policy::config_digest(c),
            AgentConfig::Ppo(c) => policy::config_digest(c),
        }
    }

    pub fn train(&self, setup: &TrainingSetup<'_>, seed: u64) -> Result<TrainOutcome> {
        match self {
            AgentConfig::Dqn(c) => train_dqn(setup, c, seed),
            AgentConfig::Ppo(c) => train_ppo(setup, c, seed),
        }
    }
}

/// Plan produced by a greedy rollout of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedQuery {
    pub plan: PlanNode,
    pub cost: f64,
    pub latency: Duration,
    pub forward_passes: usize,
}

/// Plans `query` greedily with `policy`: one network evaluation per join.
pub fn plan_query<'a>(
    policy: &Policy,
    query: &'a JoinQuery,
    env: &mut JoinEnv<'a>,
) -> Result<PlannedQuery> {
    let started = Instant::now();
    let mut out = env.reset(query)?;
    let mut passes = 0;
    while !out.done {
        let action = policy.greedy_action(out.observation.flattened(), &out.mask)?;
        passes += 1;
        out = env.step(action)?;
    }
    let latency = started.elapsed();
    let plan = env.final_plan()?.clone();
    let cost = env
        .state()
        .and_then(|s| s.final_cost())
        .expect("terminal state has a cost");
    Ok(PlannedQuery {
        plan,
        cost,
        latency,
        forward_passes: passes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePlan {
    pub plan: PlanNode,
    pub cost: f64,
    /// Index of the member whose plan was kept.
    pub chosen: usize,
    pub member_costs: Vec<f64>,
    pub latency: Duration,
}

/// Plans with every member and keeps the cheapest plan; ties go to the lowest index.
pub fn ensemble_plan<'a>(
    policies: &[Policy],
    query: &'a JoinQuery,
    env: &mut JoinEnv<'a>,
) -> Result<EnsemblePlan> {
    if policies.is_empty() {
        return Err(Error::Config("ensemble needs at least one policy".into()));
    }
    let mut best: Option<(usize, PlannedQuery)> = None;
    let mut member_costs = Vec::with_capacity(policies.len());
    let mut latency = Duration::ZERO;
    for (i, p) in policies.iter().enumerate() {
        let planned = plan_query(p, query, env)?;
        member_costs.push(planned.cost);
        latency += planned.latency;
        if best.as_ref().is_none_or(|(_, b)| planned.cost < b.cost) {
            best = Some((i, planned));
        }
    }
    let (chosen, planned) = best.expect("non-empty");
    Ok(EnsemblePlan {
        plan: planned.plan,
        cost: planned.cost,
        chosen,
        member_costs,
        latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::running_example_catalog;
    use crate::nn::Mlp;
    use rand::SeedableRng;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        match preset("ppo-paper").unwrap() {
            AgentConfig::Ppo(c) => {
                assert_eq!(c.clip_epsilon, 0.3);
                assert_eq!(c.hidden, vec![256, 256]);
            }
            _ => panic!("ppo preset"),
        }
        match preset("dqn-paper").unwrap() {
            AgentConfig::Dqn(c) => {
                assert_eq!((c.total_steps, c.learning_starts, c.target_update), (4000, 1000, 500));
                assert_eq!(c.n_step, 2);
            }
            _ => panic!("dqn preset"),
        }
        assert!(matches!(preset("a3c"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides() {
        let mut c = preset("ppo-desk").unwrap();
        c.apply_override("lr=3e-4").unwrap();
        c.apply_override("hidden=[64, 32]").unwrap();
        match &c {
            AgentConfig::Ppo(p) => {
                assert_eq!(p.lr, 3e-4);
                assert_eq!(p.hidden, vec![64, 32]);
            }
            _ => panic!(),
        }
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("clip_epsilon=-1").is_err());
        assert!(c.apply_override("lr").is_err());
        let mut d = preset("ddqn-desk").unwrap();
        d.apply_override("mask_mode=non-empty-rows").unwrap();
        assert_ne!(d.digest(), preset("ddqn-desk").unwrap().digest());
    }

    #[test]
    fn plan_query_uses_one_pass_per_join() {
        let cat = running_example_catalog();
        let q = crate::fixtures::running_example_query(&cat);
        let p = CardinalityProvider::Estimated;
        let mut env = JoinEnv::new(&cat, &p, EnvConfig::default()).unwrap();
        let net = Mlp::new(&[55, 16, 12], &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        let policy = Policy {
            header: policy::PolicyHeader {
                kind: AgentKind::Dqn,
                seed: 3,
                steps: 0,
                config: serde_json::Value::Null,
                config_digest: String::new(),
                catalog_digest: cat.digest(),
                cost_params: CostParams::default(),
                input_size: 55,
                action_count: 12,
                mask_mode: MaskMode::Connected,
                masking: crate::nn::MaskingMode::Sentinel,
            },
            net,
        };
        let a = plan_query(&policy, &q, &mut env).unwrap();
        assert_eq!(a.forward_passes, 3);
        let b = plan_query(&policy, &q, &mut env).unwrap();
        assert_eq!(a.plan, b.plan);
        let bq = crate::workload::BoundQuery::new(&q, &cat, &p).unwrap();
        let dp = crate::dp::dp_left_deep(&bq, &CostParams::default(), Default::default()).unwrap();
        if a.plan.is_left_deep() {
            assert!(a.cost >= dp.cost);
        }
        let single = ensemble_plan(std::slice::from_ref(&policy), &q, &mut env).unwrap();
        assert_eq!((single.plan, single.cost, single.chosen), (a.plan, a.cost, 0));
        assert!(ensemble_plan(&[], &q, &mut env).is_err());
    }
}
