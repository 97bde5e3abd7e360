//! Trained policies and their on-disk format.
//!
//! A policy file is the magic `JRLP`, a `u32` format version, a `u32` header
//! length, a UTF-8 JSON header, and then a weight record in the layout
//! described in [`crate::nn`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{hex_digest, Catalog};
use crate::env::{ActionMask, MaskMode};
use crate::error::{Error, Result};
use crate::nn::{apply_mask, Mlp, MaskingMode};
use crate::plancost::CostParams;

const POLICY_MAGIC: &[u8; 4] = b"JRLP";
const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Ddqn,
    Ppo,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::Ppo => "ppo",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "ddqn" => Ok(AgentKind::Ddqn),
            "ppo" => Ok(AgentKind::Ppo),
            other => Err(Error::Config(format!(
                "unknown agent `{other}` (expected dqn, ddqn or ppo)"
            ))),
        }
    }
}

/// Metadata stored ahead of the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub kind: AgentKind,
    pub seed: u64,
    /// Environment steps taken during training.
    pub steps: u64,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub catalog_digest: String,
    /// Cost model and reward mapping used during training.
    pub cost_params: CostParams,
    pub input_size: usize,
    pub action_count: usize,
    pub mask_mode: MaskMode,
    pub masking: MaskingMode,
}

/// A trained network plus the metadata needed to use it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub header: PolicyHeader,
    pub net: Mlp,
}

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_digest<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_string(config).expect("configs serialize");
    hex_digest(json.as_bytes())
}

impl Policy {
    pub fn kind(&self) -> AgentKind {
        self.header.kind
    }

    /// Action preferences for an observation: Q-values for DQN-style
    /// policies, logits for PPO (the value output is dropped).
    pub fn preferences(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.net.forward(obs)?;
        out.truncate(self.header.action_count);
        Ok(out)
    }

    /// Greedy action under `mask`.
    pub fn greedy_action(&self, obs: &[f64], mask: &ActionMask) -> Result<usize> {
        let prefs = self.preferences(obs)?;
        Ok(apply_mask(&prefs, mask, self.header.masking)?.argmax())
    }

    /// Rejects use with a catalog other than the one the policy was trained on.
    pub fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        let digest = catalog.digest();
        if digest != self.header.catalog_digest {
            return Err(Error::Config(format!(
                "policy was trained on catalog {} but this catalog is {}",
                short(&self.header.catalog_digest),
                short(&digest)
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(POLICY_MAGIC);
        out.extend_from_slice(&POLICY_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.net.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != POLICY_MAGIC {
            return Err(Error::Weights("not a policy file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != POLICY_VERSION {
            return Err(Error::Weights(format!("unsupported policy version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_bytes = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Weights("truncated policy header".into()))?;
        let header: PolicyHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Weights(format!("policy header: {e}")))?;
        let net = Mlp::from_bytes(&bytes[12 + len..])?;
        if net.input_size() != header.input_size || net.output_size() < header.action_count {
            return Err(Error::Weights(format!(
                "network {:?} does not fit input {} / {} actions",
                net.sizes(),
                header.input_size,
                header.action_count
            )));
        }
        Ok(Self { header, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
    }
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::running_example_catalog;
    use rand::SeedableRng;

    fn sample_policy() -> Policy {
        let cat = running_example_catalog();
        let net = Mlp::new(&[55, 8, 12], &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let config = serde_json::json!({"lr": 0.001});
        Policy {
            header: PolicyHeader {
                kind: AgentKind::Dqn,
                seed: 1,
                steps: 10,
                config_digest: config_digest(&config),
                config,
                catalog_digest: cat.digest(),
                cost_params: CostParams::default(),
                input_size: 55,
                action_count: 12,
                mask_mode: MaskMode::Connected,
                masking: MaskingMode::Sentinel,
            },
            net,
        }
    }

    #[test]
    fn file_round_trip() {
        let p = sample_policy();
        let back = Policy::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_bytes(), p.to_bytes());
        let mut bytes = p.to_bytes();
        bytes[1] = b'x';
        assert!(Policy::from_bytes(&bytes).is_err());
        let bytes = p.to_bytes();
        assert!(Policy::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn catalog_mismatch_is_refused() {
        let p = sample_policy();
        p.check_catalog(&running_example_catalog()).unwrap();
        let other = crate::catalog::generate_synthetic_catalog(4, 1).unwrap();
        assert!(matches!(p.check_catalog(&other), Err(Error::Config(_))));
    }

    #[test]
    fn kind_names() {
        for k in [AgentKind::Dqn, AgentKind::Ddqn, AgentKind::Ppo] {
            assert_eq!(k.name().parse::<AgentKind>().unwrap(), k);
        }
        assert!("a2c".parse::<AgentKind>().is_err());
    }
}
