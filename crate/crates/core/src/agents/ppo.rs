//! Proximal policy optimization with a clipped surrogate objective and
//! generalized advantage estimation.
//!
//! The network has one output per action (policy logits) plus a final value
//! output, sharing all hidden layers.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{config_digest, AgentKind, Policy, PolicyHeader};
use super::{MetricRow, TrainOutcome, TrainingMetrics, TrainingSetup};
use crate::env::{ActionMask, MaskMode};
use crate::error::{Error, Result};
use crate::nn::{apply_mask, log_softmax, Adam, Gradients, MaskingMode, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    /// Environment steps.
    pub total_steps: u64,
    /// Minimum environment steps collected per update (whole episodes).
    pub rollout_steps: usize,
    pub clip_epsilon: f64,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub normalize_advantages: bool,
    pub mask_mode: MaskMode,
    pub masking: MaskingMode,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            rollout_steps: 2048,
            clip_epsilon: 0.3,
            hidden: vec![256, 256],
            gamma: 1.0,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 128,
            vf_coef: 0.5,
            ent_coef: 0.01,
            lr: 1e-4,
            grad_clip: 0.5,
            normalize_advantages: true,
            mask_mode: MaskMode::Connected,
            masking: MaskingMode::Sentinel,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return fail(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        if self.total_steps == 0 || self.rollout_steps == 0 {
            return fail("total_steps and rollout_steps must be positive".into());
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return fail("epochs and minibatch_size must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gamma must lie in (0, 1] and gae_lambda in [0, 1]".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 || self.grad_clip <= 0.0 {
            return fail("coefficients must be non-negative and grad_clip positive".into());
        }
        if self.hidden.contains(&0) {
            return fail("hidden sizes must be positive".into());
        }
        Ok(())
    }
}

/// `min(r * adv, clip(r, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the unclipped term is the active one, so gradient flows through the ratio.
fn unclipped_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    if advantage >= 0.0 {
        ratio <= 1.0 + epsilon
    } else {
        ratio >= 1.0 - epsilon
    }
}

/// Generalized advantage estimates and returns for complete episodes laid
/// end to end; `dones[t]` marks the last step of an episode.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Samples for one loss evaluation.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub masks: Vec<ActionMask>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses {
    /// `-mean(clipped objective)`.
    pub policy: f64,
    /// Mean squared error of the value output against the returns.
    pub value: f64,
    /// Mean entropy of the masked policy.
    pub entropy: f64,
}

impl PpoLosses {
    pub fn total(&self, config: &PpoConfig) -> f64 {
        self.policy + config.vf_coef * self.value - config.ent_coef * self.entropy
    }
}

/// Masked log-probabilities of the first `mask.len()` outputs.
fn masked_log_probs(logits: &[f64], mask: &ActionMask, masking: MaskingMode) -> Result<Vec<f64>> {
    Ok(log_softmax(&apply_mask(&logits[..mask.len()], mask, masking)?.masked))
}

/// Losses of `batch` under `net`.
pub fn ppo_losses(net: &Mlp, batch: &PpoBatch, config: &PpoConfig) -> Result<PpoLosses> {
    Ok(losses_and_gradients(net, batch, config, false)?.0)
}

/// Losses and the gradient of their weighted total.
pub fn ppo_gradients(net: &Mlp, batch: &PpoBatch, config: &PpoConfig) -> Result<(PpoLosses, Gradients)> {
    let (l, g) = losses_and_gradients(net, batch, config, true)?;
    Ok((l, g.expect("requested")))
}

fn losses_and_gradients(
    net: &Mlp,
    batch: &PpoBatch,
    config: &PpoConfig,
    want_grad: bool,
) -> Result<(PpoLosses, Option<Gradients>)> {
    let b = batch.actions.len();
    let n_actions = net.output_size() - 1;
    let cache = net.forward_batch(batch.obs.clone())?;
    let mut grad = Array2::zeros(cache.output.dim());
    let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
    let eps = config.clip_epsilon;
    for i in 0..b {
        let out = cache.output.row(i);
        let out = out.as_slice().expect("contiguous");
        let mask = &batch.masks[i];
        let logp = masked_log_probs(&out[..n_actions], mask, config.masking)?;
        let a = batch.actions[i];
        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!("probability ratio for sample {i}")));
        }
        let adv = batch.advantages[i];
        pl -= clipped_objective(ratio, adv, eps);
        let value = out[n_actions];
        let verr = value - batch.returns[i];
        vl += verr * verr;
        let h: f64 = mask
            .valid_actions()
            .map(|k| -logp[k].exp() * logp[k])
            .sum();
        ent += h;
        if want_grad {
            let bf = b as f64;
            // d(-objective)/d(log pi_a), then through the softmax.
            let g_logp = if unclipped_active(ratio, adv, eps) {
                -ratio * adv / bf
            } else {
                0.0
            };
            for k in mask.valid_actions() {
                let p = logp[k].exp();
                let indicator = if k == a { 1.0 } else { 0.0 };
                let mut g = g_logp * (indicator - p);
                // d(-ent_coef * H)/d logit_k = ent_coef * p_k * (log p_k + H).
                g += config.ent_coef * p * (logp[k] + h) / bf;
                grad[[i, k]] = g;
            }
            grad[[i, n_actions]] = config.vf_coef * 2.0 * verr / bf;
        }
    }
    let bf = b as f64;
    let losses = PpoLosses {
        policy: pl / bf,
        value: vl / bf,
        entropy: ent / bf,
    };
    if !losses.total(config).is_finite() {
        return Err(Error::NonFinite("PPO loss".into()));
    }
    let grads = if want_grad {
        Some(net.backward(&cache, &grad)?)
    } else {
        None
    };
    Ok((losses, grads))
}

/// Entropy of the masked policy at one observation.
pub fn policy_entropy(net: &Mlp, obs: &[f64], mask: &ActionMask, masking: MaskingMode) -> Result<f64> {
    let out = net.forward(obs)?;
    let logp = masked_log_probs(&out, mask, masking)?;
    Ok(mask.valid_actions().map(|k| -logp[k].exp() * logp[k]).sum())
}

/// Fresh policy network: uniform fan-in initialization with the output layer
/// scaled down so the initial policy is close to uniform over valid actions.
pub fn init_network<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut net = Mlp::new(sizes, rng)?;
    let last = net.layers() - 1;
    net.weights_mut()[last].mapv_inplace(|v| v * 0.01);
    net.biases_mut()[last].fill(0.0);
    Ok(net)
}

fn sample_from_log_probs<R: Rng + ?Sized>(logp: &[f64], mask: &ActionMask, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for k in mask.valid_actions() {
        acc += logp[k].exp();
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

struct Rollout {
    obs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    masks: Vec<ActionMask>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Trains a PPO policy on the queries of `setup`.
pub fn train_ppo(setup: &TrainingSetup<'_>, config: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if setup.queries.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut env = setup.make_env(config.mask_mode)?;
    let n_actions = env.action_space().size();
    let input = env.observation_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![input];
    sizes.extend(&config.hidden);
    sizes.push(n_actions + 1);
    let mut net = init_network(&sizes, &mut rng)?;
    let mut opt = Adam::new(&net, config.lr);
    let mut metrics = TrainingMetrics::default();
    let mut step = 0u64;
    let mut episodes = 0u64;
    let mut invalid = 0u64;

    while step < config.total_steps {
        let mut ro = Rollout {
            obs: Vec::new(),
            actions: Vec::new(),
            masks: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        };
        let mut reward_sum = 0.0;
        let mut rollout_episodes = 0u64;
        while ro.actions.len() < config.rollout_steps && step < config.total_steps {
            let query = setup.queries.choose(&mut rng).expect("non-empty");
            let mut out = env.reset(query)?;
            loop {
                let obs = out.observation.flattened().to_vec();
                let net_out = net.forward(&obs)?;
                let logp = masked_log_probs(&net_out[..n_actions], &out.mask, config.masking)?;
                let action = sample_from_log_probs(&logp, &out.mask, &mut rng);
                if !out.mask.is_valid(action) {
                    invalid += 1;
                }
                let next = env.step(action)?;
                step += 1;
                ro.obs.push(obs);
                ro.actions.push(action);
                ro.masks.push(out.mask);
                ro.log_probs.push(logp[action]);
                ro.values.push(net_out[n_actions]);
                ro.rewards.push(next.reward);
                ro.dones.push(next.done);
                if next.done {
                    reward_sum += next.reward;
                    rollout_episodes += 1;
                    break;
                }
                out = next;
            }
        }
        episodes += rollout_episodes;
        // A budget cut can only happen at an episode boundary, so every
        // rollout consists of whole episodes.
        let (mut adv, returns) = gae(&ro.rewards, &ro.values, &ro.dones, config.gamma, config.gae_lambda);
        if config.normalize_advantages && adv.len() > 1 {
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            for a in &mut adv {
                *a = (*a - mean) / (std + 1e-8);
            }
        }

        let n = ro.actions.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut last = PpoLosses {
            policy: 0.0,
            value: 0.0,
            entropy: 0.0,
        };
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch_size) {
                let mut obs = Array2::zeros((chunk.len(), input));
                for (r, &i) in chunk.iter().enumerate() {
                    obs.row_mut(r).assign(&ndarray::ArrayView1::from(&ro.obs[i]));
                }
                let batch = PpoBatch {
                    obs,
                    actions: chunk.iter().map(|&i| ro.actions[i]).collect(),
                    masks: chunk.iter().map(|&i| ro.masks[i].clone()).collect(),
                    old_log_probs: chunk.iter().map(|&i| ro.log_probs[i]).collect(),
                    advantages: chunk.iter().map(|&i| adv[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                let (losses, mut grads) = ppo_gradients(&net, &batch, config)
                    .map_err(|e| e.context(format!("PPO update at step {step}")))?;
                grads.clip_norm(config.grad_clip);
                opt.step(&mut net, &grads)?;
                last = losses;
            }
        }
        metrics.rows.push(MetricRow {
            step,
            loss: last.total(config),
            mean_episode_reward: if rollout_episodes > 0 {
                reward_sum / rollout_episodes as f64
            } else {
                f64::NAN
            },
            exploration: last.entropy,
        });
    }

    let policy = Policy {
        header: PolicyHeader {
            kind: AgentKind::Ppo,
            seed,
            steps: step,
            config_digest: config_digest(config),
            config: serde_json::to_value(config).expect("config serializes"),
            catalog_digest: setup.catalog.digest(),
            cost_params: setup.params,
            input_size: input,
            action_count: n_actions,
            mask_mode: config.mask_mode,
            masking: config.masking,
        },
        net,
    };
    Ok(TrainOutcome {
        policy,
        metrics,
        invalid_actions: invalid,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clip_examples() {
        assert_relative_eq!(clipped_objective(1.5, 1.0, 0.3), 1.3);
        assert_relative_eq!(clipped_objective(0.5, -1.0, 0.3), -0.7);
        assert_eq!(clipped_objective(1.0, 2.5, 0.3), 2.5);
        assert_eq!(clipped_objective(1.0, -0.25, 0.3), -0.25);
    }

    #[test]
    fn gae_single_episode() {
        // One two-step episode, gamma = 1, lambda = 1: advantages are
        // terminal reward minus value.
        let (adv, ret) = gae(&[0.0, -4.0], &[-1.0, -3.0], &[false, true], 1.0, 1.0);
        assert_eq!(adv, vec![-3.0, -1.0]);
        assert_eq!(ret, vec![-4.0, -4.0]);
        // lambda = 0 gives one-step TD errors.
        let (adv, _) = gae(&[0.0, -4.0], &[-1.0, -3.0], &[false, true], 1.0, 0.0);
        assert_eq!(adv, vec![-2.0, -1.0]);
    }

    #[test]
    fn gae_does_not_leak_across_episodes() {
        let (adv, _) = gae(&[-1.0, -2.0], &[0.0, 0.0], &[true, true], 1.0, 0.95);
        assert_eq!(adv, vec![-1.0, -2.0]);
    }

    /// Loss gradients against central finite differences in parameter space.
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[5, 7, 4], &mut rng).unwrap();
        let config = PpoConfig {
            clip_epsilon: 0.2,
            ..Default::default()
        };
        let mut obs = Array2::zeros((4, 5));
        obs.mapv_inplace(|_: f64| rng.gen_range(-1.0..1.0));
        let masks = vec![
            ActionMask(vec![true, true, true]),
            ActionMask(vec![true, false, true]),
            ActionMask(vec![false, true, true]),
            ActionMask(vec![true, true, false]),
        ];
        let batch = PpoBatch {
            obs,
            actions: vec![0, 2, 1, 1],
            masks,
            old_log_probs: vec![-1.2, -0.4, -0.9, -0.5],
            advantages: vec![1.0, -0.5, 0.7, -1.3],
            returns: vec![-1.0, -2.0, 0.0, -0.5],
        };
        let (_, g) = ppo_gradients(&net, &batch, &config).unwrap();
        for idx in (0..net.parameter_count()).step_by(3) {
            let p = net.parameter(idx);
            let h = 1e-6;
            net.set_parameter(idx, p + h);
            let up = ppo_losses(&net, &batch, &config).unwrap().total(&config);
            net.set_parameter(idx, p - h);
            let down = ppo_losses(&net, &batch, &config).unwrap().total(&config);
            net.set_parameter(idx, p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.get(idx);
            let err = (numeric - analytic).abs();
            assert!(
                err <= 1e-6 || err / numeric.abs().max(analytic.abs()) <= 1e-4,
                "param {idx}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn fresh_policy_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = init_network(&[10, 32, 32, 13], &mut rng).unwrap();
        let obs: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let mask = ActionMask((0..12).map(|k| k % 3 != 0).collect());
        let h = policy_entropy(&net, &obs, &mask, MaskingMode::Sentinel).unwrap();
        let uniform = (mask.valid_count() as f64).ln();
        assert!((h - uniform).abs() / uniform < 0.05, "{h} vs {uniform}");
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig {
            clip_epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        PpoConfig::default().validate().unwrap();
    }
}
