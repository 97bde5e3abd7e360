//! Join-order optimization with deep reinforcement learning.
//!
//! A query's join order is planned by a sequence of pairwise merges in a
//! fully observed environment ([`env`]). Plans are priced by a main-memory
//! cost model ([`plancost`]) whose cost maps to a terminal reward. Agents
//! ([`agents`]) learn merge policies with DQN, Double DQN with prioritized
//! replay, or PPO, and are compared against a left-deep dynamic-programming
//! baseline ([`dp`]) by the [`experiment`] harness.
//!
//! ```
//! use joinrl::fixtures::{running_example_catalog, running_example_query};
//! use joinrl::{dp_left_deep, BoundQuery, CardinalityProvider, CostParams, DpOptions};
//!
//! let catalog = running_example_catalog();
//! let query = running_example_query(&catalog);
//! let bound = BoundQuery::new(&query, &catalog, &CardinalityProvider::Estimated)?;
//! let best = dp_left_deep(&bound, &CostParams::default(), DpOptions::default())?;
//! assert!(best.plan.is_left_deep());
//! # Ok::<(), joinrl::Error>(())
//! ```

pub mod agents;
pub mod catalog;
pub mod dp;
pub mod env;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod nn;
pub mod plancost;
pub mod workload;

pub use agents::{preset, AgentConfig, AgentKind, Policy, TrainingSetup};
pub use catalog::{CardinalityProvider, Catalog, LookupTable};
pub use dp::{dp_left_deep, DpOptions};
pub use env::{EnvConfig, JoinEnv, MaskMode};
pub use error::{Error, Result};
pub use plancost::{cost, reward_from_cost, CostParams, PlanNode};
pub use workload::{BoundQuery, JoinQuery, Split, Workload};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/catalog.md")]
    pub mod catalog {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    pub mod cost_model {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    pub mod baselines {}
    #[doc = include_str!("../../../book/src/environment.md")]
    pub mod environment {}
    #[doc = include_str!("../../../book/src/networks.md")]
    pub mod networks {}
    #[doc = include_str!("../../../book/src/agents.md")]
    pub mod agents {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
