//! Experience replay: a fixed-capacity ring of transitions with optional
//! proportional prioritization backed by a sum tree.

use rand::Rng;

use crate::env::ActionMask;
use crate::error::{Error, Result};

/// Offset added to absolute TD errors so no transition becomes unsampleable.
pub const PRIORITY_EPSILON: f64 = 1e-6;

/// One (possibly n-step) transition. Observations are binary and stored as
/// one byte per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<u8>,
    pub action: usize,
    /// Discounted reward accumulated over `steps` environment steps.
    pub reward: f64,
    pub next_obs: Vec<u8>,
    pub done: bool,
    pub next_mask: ActionMask,
    /// Discount applied to the bootstrap value, `gamma^steps`.
    pub discount: f64,
    pub steps: usize,
}

pub fn pack_observation(obs: &[f64]) -> Vec<u8> {
    obs.iter().map(|&v| u8::from(v != 0.0)).collect()
}

pub fn unpack_observation(obs: &[u8], out: &mut [f64]) {
    for (o, &b) in out.iter_mut().zip(obs) {
        *o = f64::from(b);
    }
}

/// `(|td_error| + 1e-6)^alpha`.
pub fn priority_of(td_error: f64, alpha: f64) -> f64 {
    (td_error.abs() + PRIORITY_EPSILON).powf(alpha)
}

/// Binary tree of partial sums over leaf priorities.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.nodes[self.leaves + slot]
    }

    pub fn set(&mut self, slot: usize, value: f64) {
        let mut i = self.leaves + slot;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, for `0 <= mass < total`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if mass < left || self.nodes[2 * i + 1] == 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

#[derive(Debug, Clone)]
struct Prioritization {
    alpha: f64,
    tree: SumTree,
    max_priority: f64,
}

/// Result of sampling: slots, their transitions (by reference into the
/// buffer) and importance weights.
#[derive(Debug)]
pub struct SampledBatch<'b> {
    pub slots: Vec<usize>,
    pub transitions: Vec<&'b Transition>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    per: Option<Prioritization>,
}

impl ReplayBuffer {
    /// Uniform replay.
    pub fn uniform(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
            per: None,
        })
    }

    /// Proportional prioritized replay with exponent `alpha`.
    pub fn prioritized(capacity: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("priority exponent must be >= 0, got {alpha}")));
        }
        let mut buf = Self::uniform(capacity)?;
        buf.per = Some(Prioritization {
            alpha,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        });
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_prioritized(&self) -> bool {
        self.per.is_some()
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// Stored sampling priority of `slot` (already raised to alpha).
    pub fn priority(&self, slot: usize) -> Option<f64> {
        let per = self.per.as_ref()?;
        (slot < self.items.len()).then(|| per.tree.get(slot))
    }

    pub fn max_priority(&self) -> Option<f64> {
        self.per.as_ref().map(|p| p.max_priority)
    }

    /// Inserts a transition, overwriting the oldest once full; returns its slot.
    /// Prioritized buffers give it the current maximum priority.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        if let Some(per) = &mut self.per {
            per.tree.set(slot, per.max_priority);
        }
        slot
    }

    /// Sets the priority of `slot` from an unexponentiated priority `raw`.
    pub fn set_priority(&mut self, slot: usize, raw: f64) -> Result<()> {
        if slot >= self.items.len() {
            return Err(Error::Config(format!("slot {slot} is empty")));
        }
        let Some(per) = &mut self.per else {
            return Ok(());
        };
        if !(raw > 0.0 && raw.is_finite()) {
            return Err(Error::NonFinite(format!("priority {raw} for slot {slot}")));
        }
        let p = raw.powf(per.alpha);
        per.tree.set(slot, p);
        per.max_priority = per.max_priority.max(p);
        Ok(())
    }

    /// Updates priorities from the absolute TD errors of a trained batch.
    pub fn update_td_errors(&mut self, slots: &[usize], td_errors: &[f64]) -> Result<()> {
        for (&s, &td) in slots.iter().zip(td_errors) {
            self.set_priority(s, td.abs() + PRIORITY_EPSILON)?;
        }
        Ok(())
    }

    /// Sampling probability of `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        match &self.per {
            Some(per) => per.tree.get(slot) / per.tree.total(),
            None => 1.0 / self.items.len() as f64,
        }
    }

    /// Draws `batch` slots with replacement. Importance weights are
    /// `(N * P(i))^-beta` divided by the batch maximum; all 1 for uniform replay.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch<'_>> {
        if self.items.is_empty() {
            return Err(Error::Config("cannot sample from an empty replay buffer".into()));
        }
        let n = self.items.len();
        let mut slots = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        match &self.per {
            None => {
                for _ in 0..batch {
                    slots.push(rng.gen_range(0..n));
                    weights.push(1.0);
                }
            }
            Some(per) => {
                let total = per.tree.total();
                for _ in 0..batch {
                    let slot = per.tree.find(rng.gen::<f64>() * total).min(n - 1);
                    slots.push(slot);
                    let p = per.tree.get(slot) / total;
                    weights.push((n as f64 * p).powf(-beta));
                }
                let max = weights.iter().copied().fold(0.0, f64::max);
                for w in &mut weights {
                    *w /= max;
                }
            }
        }
        let transitions = slots.iter().map(|&s| &self.items[s]).collect();
        Ok(SampledBatch {
            slots,
            transitions,
            weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dummy(action: usize) -> Transition {
        Transition {
            obs: vec![1, 0],
            action,
            reward: 0.0,
            next_obs: vec![0, 1],
            done: false,
            next_mask: ActionMask(vec![true, true]),
            discount: 1.0,
            steps: 1,
        }
    }

    #[test]
    fn priority_formula() {
        assert_relative_eq!(priority_of(-2.0, 1.0), 2.000001);
        assert_eq!(priority_of(5.0, 0.0), 1.0);
    }

    #[test]
    fn proportional_probabilities() {
        let mut buf = ReplayBuffer::prioritized(4, 1.0).unwrap();
        buf.push(dummy(0));
        buf.push(dummy(1));
        buf.set_priority(0, 3.0).unwrap();
        buf.set_priority(1, 1.0).unwrap();
        assert_relative_eq!(buf.probability(0), 0.75);
        assert_relative_eq!(buf.probability(1), 0.25);

        let mut flat = ReplayBuffer::prioritized(4, 0.0).unwrap();
        flat.push(dummy(0));
        flat.push(dummy(1));
        flat.set_priority(0, 3.0).unwrap();
        flat.set_priority(1, 1.0).unwrap();
        assert_relative_eq!(flat.probability(0), 0.5);
    }

    #[test]
    fn new_transitions_get_max_priority() {
        let mut buf = ReplayBuffer::prioritized(8, 0.6).unwrap();
        buf.push(dummy(0));
        assert_eq!(buf.priority(0), Some(1.0));
        buf.set_priority(0, 10.0).unwrap();
        let max = buf.max_priority().unwrap();
        assert_relative_eq!(max, 10f64.powf(0.6));
        let s = buf.push(dummy(1));
        assert_eq!(buf.priority(s), Some(max));
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::uniform(2).unwrap();
        for a in 0..3 {
            buf.push(dummy(a));
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(0).unwrap().action, 2);
        assert_eq!(buf.get(1).unwrap().action, 1);
    }

    #[test]
    fn sampling_frequencies_and_weights() {
        let mut buf = ReplayBuffer::prioritized(2, 1.0).unwrap();
        buf.push(dummy(0));
        buf.push(dummy(1));
        buf.set_priority(0, 3.0).unwrap();
        buf.set_priority(1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = buf.sample(20_000, 1.0, &mut rng).unwrap();
        let freq0 = b.slots.iter().filter(|&&s| s == 0).count() as f64 / 20_000.0;
        assert!((freq0 - 0.75).abs() < 0.02, "{freq0}");
        for (&s, &w) in b.slots.iter().zip(&b.weights) {
            // (2 * 0.75)^-1 / (2 * 0.25)^-1 = 1/3 for the frequent slot.
            assert_relative_eq!(w, if s == 0 { 1.0 / 3.0 } else { 1.0 });
        }
        assert!(ReplayBuffer::uniform(3).unwrap().sample(1, 0.4, &mut rng).is_err());
    }

    #[test]
    fn sum_tree_find() {
        let mut t = SumTree::new(5);
        for (i, p) in [1.0, 0.0, 2.0, 3.0, 4.0].iter().enumerate() {
            t.set(i, *p);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(9.99), 4);
    }
}
