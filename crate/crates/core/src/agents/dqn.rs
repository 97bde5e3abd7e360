//! Deep Q-learning: vanilla DQN with a target network, and Double DQN with
//! prioritized replay. Both use n-step returns and epsilon-greedy exploration
//! over masked Q-values.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{config_digest, AgentKind, Policy, PolicyHeader};
use super::replay::{pack_observation, unpack_observation, ReplayBuffer, Transition};
use super::{MetricRow, TrainOutcome, TrainingMetrics, TrainingSetup};
use crate::env::{ActionMask, MaskMode};
use crate::error::{Error, Result};
use crate::nn::{apply_mask, Adam, MaskingMode, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DqnVariant {
    /// Max over the target network's Q-values, uniform replay.
    Vanilla,
    /// Online network selects, target network evaluates; prioritized replay.
    DoublePer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub variant: DqnVariant,
    /// Environment steps.
    pub total_steps: u64,
    pub learning_starts: u64,
    /// Environment steps between target-network synchronizations.
    pub target_update: u64,
    pub n_step: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub batch_size: usize,
    /// Rows only record which tables they hold, not their join order, so one
    /// observation can stand for histories of very different cost. A small
    /// buffer and short exploration phase keep replayed histories close to
    /// the current policy.
    pub buffer_capacity: usize,
    /// Environment steps per gradient update.
    pub train_freq: u64,
    pub lr: f64,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub grad_clip: f64,
    pub mask_mode: MaskMode,
    pub masking: MaskingMode,
    pub log_interval: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            variant: DqnVariant::DoublePer,
            total_steps: 200_000,
            learning_starts: 20_000,
            target_update: 10_000,
            n_step: 2,
            hidden: vec![256, 256],
            gamma: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.1,
            batch_size: 32,
            buffer_capacity: 10_000,
            train_freq: 4,
            lr: 5e-4,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            grad_clip: 10.0,
            mask_mode: MaskMode::Connected,
            masking: MaskingMode::Sentinel,
            log_interval: 1000,
        }
    }
}

impl DqnConfig {
    pub fn kind(&self) -> AgentKind {
        match self.variant {
            DqnVariant::Vanilla => AgentKind::Dqn,
            DqnVariant::DoublePer => AgentKind::Ddqn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.total_steps == 0 {
            return fail("total_steps must be positive".into());
        }
        if self.learning_starts >= self.total_steps {
            return fail(format!(
                "learning_starts ({}) must be below total_steps ({})",
                self.learning_starts, self.total_steps
            ));
        }
        if self.n_step == 0 {
            return fail("n_step must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.target_update == 0 || self.train_freq == 0 || self.batch_size == 0 {
            return fail("target_update, train_freq and batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity must hold at least one batch".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_fraction)
        {
            return fail("epsilon settings must lie in [0, 1]".into());
        }
        if self.per_alpha < 0.0
            || !(0.0..=1.0).contains(&self.per_beta_start)
            || !(0.0..=1.0).contains(&self.per_beta_end)
        {
            return fail("per_alpha must be >= 0 and beta values in [0, 1]".into());
        }
        if self.hidden.contains(&0) || self.log_interval == 0 {
            return fail("hidden sizes and log_interval must be positive".into());
        }
        Ok(())
    }

    /// Exploration rate after `step` environment steps.
    pub fn epsilon(&self, step: u64) -> f64 {
        let horizon = self.epsilon_fraction * self.total_steps as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    /// Importance-sampling exponent after `step` environment steps.
    pub fn beta(&self, step: u64) -> f64 {
        let frac = (step as f64 / self.total_steps as f64).min(1.0);
        self.per_beta_start + frac * (self.per_beta_end - self.per_beta_start)
    }
}

/// Result of folding up to `n` rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NStepReturn {
    pub reward: f64,
    /// Steps folded, `min(n, steps to terminal)`.
    pub steps: usize,
    /// Whether the target bootstraps from the state `steps` ahead.
    pub bootstrap: bool,
    /// `gamma^steps`.
    pub discount: f64,
}

/// Folds a segment of `(reward, done)` pairs starting at the transition of interest.
pub fn n_step_return(segment: &[(f64, bool)], n: usize, gamma: f64) -> Result<NStepReturn> {
    if segment.is_empty() || n == 0 {
        return Err(Error::Config("n-step return needs a non-empty segment and n >= 1".into()));
    }
    let mut reward = 0.0;
    let mut scale = 1.0;
    let mut steps = 0;
    let mut done = false;
    for &(r, d) in segment.iter().take(n) {
        reward += scale * r;
        scale *= gamma;
        steps += 1;
        if d {
            done = true;
            break;
        }
    }
    Ok(NStepReturn {
        reward,
        steps,
        bootstrap: !done,
        discount: scale,
    })
}

/// `r + discount * max_{valid a'} Q_target(s', a')`, or `r` when done.
pub fn dqn_target(
    reward: f64,
    done: bool,
    discount: f64,
    next_q_target: &[f64],
    next_mask: &ActionMask,
) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    let masked = apply_mask(next_q_target, next_mask, MaskingMode::Sentinel)?;
    Ok(reward + discount * masked.masked[masked.argmax()])
}

/// `r + discount * Q_target(s', argmax_{valid a'} Q_online(s', a'))`, or `r` when done.
pub fn ddqn_target(
    reward: f64,
    done: bool,
    discount: f64,
    next_q_online: &[f64],
    next_q_target: &[f64],
    next_mask: &ActionMask,
) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    let a = apply_mask(next_q_online, next_mask, MaskingMode::Sentinel)?.argmax();
    Ok(reward + discount * next_q_target[a])
}

struct PendingStep {
    obs: Vec<u8>,
    action: usize,
    reward: f64,
    done: bool,
    next_obs: Vec<u8>,
    next_mask: ActionMask,
}

/// Turns the episode steps starting at `start` into one n-step transition.
fn make_transition(episode: &[PendingStep], start: usize, n: usize, gamma: f64) -> Transition {
    let segment: Vec<(f64, bool)> = episode[start..].iter().map(|s| (s.reward, s.done)).collect();
    let ret = n_step_return(&segment, n, gamma).expect("non-empty segment");
    let last = &episode[start + ret.steps - 1];
    Transition {
        obs: episode[start].obs.clone(),
        action: episode[start].action,
        reward: ret.reward,
        next_obs: last.next_obs.clone(),
        done: !ret.bootstrap,
        next_mask: last.next_mask.clone(),
        discount: ret.discount,
        steps: ret.steps,
    }
}

fn batch_matrix(rows: &[&[u8]], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (mut row, src) in m.rows_mut().into_iter().zip(rows) {
        unpack_observation(src, row.as_slice_mut().expect("contiguous"));
    }
    m
}

/// One gradient step on a sampled batch; returns the weighted loss and TD errors.
fn update(
    net: &mut Mlp,
    target: &Mlp,
    opt: &mut Adam,
    batch: &[&Transition],
    weights: &[f64],
    config: &DqnConfig,
) -> Result<(f64, Vec<f64>)> {
    let width = net.input_size();
    let b = batch.len();
    let next = batch_matrix(&batch.iter().map(|t| t.next_obs.as_slice()).collect::<Vec<_>>(), width);
    let target_next = target.forward_batch(next.clone())?.output;
    let online_next = match config.variant {
        DqnVariant::DoublePer => Some(net.forward_batch(next)?.output),
        DqnVariant::Vanilla => None,
    };
    let mut y = Vec::with_capacity(b);
    for (i, t) in batch.iter().enumerate() {
        let tq = target_next.row(i);
        let tq = tq.as_slice().expect("contiguous");
        let v = match &online_next {
            None => dqn_target(t.reward, t.done, t.discount, tq, &t.next_mask)?,
            Some(on) => ddqn_target(
                t.reward,
                t.done,
                t.discount,
                on.row(i).as_slice().expect("contiguous"),
                tq,
                &t.next_mask,
            )?,
        };
        y.push(v);
    }
    let obs = batch_matrix(&batch.iter().map(|t| t.obs.as_slice()).collect::<Vec<_>>(), width);
    let cache = net.forward_batch(obs)?;
    let mut grad = Array2::zeros(cache.output.dim());
    let mut loss = 0.0;
    let mut td = Vec::with_capacity(b);
    for (i, t) in batch.iter().enumerate() {
        let err = cache.output[[i, t.action]] - y[i];
        td.push(err);
        loss += 0.5 * weights[i] * err * err;
        grad[[i, t.action]] = weights[i] * err / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("DQN loss ({loss})")));
    }
    let mut grads = net.backward(&cache, &grad)?;
    grads.clip_norm(config.grad_clip);
    opt.step(net, &grads)?;
    Ok((loss, td))
}

/// Trains a Q-network on the queries of `setup`.
pub fn train_dqn(setup: &TrainingSetup<'_>, config: &DqnConfig, seed: u64) -> Result<TrainOutcome> {
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
    sizes.push(n_actions);
    let mut net = Mlp::new(&sizes, &mut rng)?;
    let mut target = net.clone();
    let mut opt = Adam::new(&net, config.lr);
    let mut buffer = match config.variant {
        DqnVariant::Vanilla => ReplayBuffer::uniform(config.buffer_capacity)?,
        DqnVariant::DoublePer => ReplayBuffer::prioritized(config.buffer_capacity, config.per_alpha)?,
    };

    let mut metrics = TrainingMetrics::default();
    let mut window_loss = (0.0, 0u64);
    let mut window_reward = (0.0, 0u64);
    let mut step = 0u64;
    let mut episodes = 0u64;
    let mut invalid = 0u64;
    let mut episode: Vec<PendingStep> = Vec::new();

    'outer: while step < config.total_steps {
        let query = setup.queries.choose(&mut rng).expect("non-empty");
        let mut out = env.reset(query)?;
        episode.clear();
        let mut emitted = 0;
        loop {
            let obs = out.observation.flattened();
            let eps = config.epsilon(step);
            let action = if rng.gen::<f64>() < eps {
                let valid: Vec<usize> = out.mask.valid_actions().collect();
                *valid.choose(&mut rng).expect("live states have a valid action")
            } else {
                let q = net.forward(obs)?;
                apply_mask(&q, &out.mask, config.masking)?.argmax()
            };
            if !out.mask.is_valid(action) {
                invalid += 1;
            }
            let packed = pack_observation(obs);
            let next = env.step(action)?;
            step += 1;
            episode.push(PendingStep {
                obs: packed,
                action,
                reward: next.reward,
                done: next.done,
                next_obs: pack_observation(next.observation.flattened()),
                next_mask: next.mask.clone(),
            });
            if next.done {
                for start in emitted..episode.len() {
                    buffer.push(make_transition(&episode, start, config.n_step, config.gamma));
                }
                episodes += 1;
                window_reward.0 += next.reward;
                window_reward.1 += 1;
            } else if episode.len() >= config.n_step {
                buffer.push(make_transition(&episode, emitted, config.n_step, config.gamma));
                emitted += 1;
            }

            if step >= config.learning_starts
                && step % config.train_freq == 0
                && buffer.len() >= config.batch_size
            {
                let sampled = buffer.sample(config.batch_size, config.beta(step), &mut rng)?;
                let (loss, td) = update(
                    &mut net,
                    &target,
                    &mut opt,
                    &sampled.transitions,
                    &sampled.weights,
                    config,
                )
                .map_err(|e| e.context(format!("DQN update at step {step}")))?;
                let slots = sampled.slots;
                if buffer.is_prioritized() {
                    buffer.update_td_errors(&slots, &td)?;
                }
                window_loss.0 += loss;
                window_loss.1 += 1;
            }
            if step >= config.learning_starts && step % config.target_update == 0 {
                target = net.clone();
            }
            if step % config.log_interval == 0 {
                metrics.rows.push(MetricRow {
                    step,
                    loss: mean(window_loss),
                    mean_episode_reward: mean(window_reward),
                    exploration: eps,
                });
                window_loss = (0.0, 0);
                window_reward = (0.0, 0);
            }
            if next.done {
                break;
            }
            if step >= config.total_steps {
                break 'outer;
            }
            out = next;
        }
    }
    if metrics.rows.last().is_none_or(|r| r.step != step) {
        metrics.rows.push(MetricRow {
            step,
            loss: mean(window_loss),
            mean_episode_reward: mean(window_reward),
            exploration: config.epsilon(step),
        });
    }

    let config_json = serde_json::to_value(config).expect("config serializes");
    let policy = Policy {
        header: PolicyHeader {
            kind: config.kind(),
            seed,
            steps: step,
            config_digest: config_digest(config),
            config: config_json,
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

fn mean((sum, count): (f64, u64)) -> f64 {
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}
