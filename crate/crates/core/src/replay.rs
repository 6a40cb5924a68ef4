//! Replay storage with uniform, proportional (TD) and change-aware priorities.
//!
//! Priorities `p` are stored raw; the sum-tree holds `p^α`, so a leaf's share
//! of the root is its sampling probability. Under the change-aware policy a
//! transition belongs to the pre-change partition when its epoch is older
//! than the buffer's current epoch:
//!
//! * pre-change: `p = 2σ(-|DoE|)`, which favours transitions the shift left untouched;
//! * current epoch: `p = (1 - S)(2σ(|TD|) - 1) + S(2σ(|DoE|) - 1)`, mixing
//!   TD error and discrepancy by the normalized detector score `S`.
//!
//! Both are floored at `epsilon`.

use rand::Rng;

use crate::detector::DetectionEvent;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Matrix};
use crate::sac::TransitionBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayPolicy {
    Uniform,
    Per,
    Deer,
}

impl ReplayPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ReplayPolicy::Uniform => "uniform",
            ReplayPolicy::Per => "per",
            ReplayPolicy::Deer => "deer",
        }
    }
}

impl std::str::FromStr for ReplayPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ReplayPolicy::Uniform),
            "per" => Ok(ReplayPolicy::Per),
            "deer" => Ok(ReplayPolicy::Deer),
            other => Err(Error::config("policy", format!("unknown replay policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for ReplayPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub policy: ReplayPolicy,
    /// Recompute priorities from fresh TD/DoE each time a transition is
    /// sampled. When off, priorities are only set at insertion and by the
    /// change sweep.
    pub refresh_on_sample: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 200_000,
            alpha: 0.6,
            beta: 0.4,
            epsilon: 1e-3,
            policy: ReplayPolicy::Deer,
            refresh_on_sample: true,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("replay_capacity", "must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("replay_alpha", "must lie in (0, 1]"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("replay_beta", "must lie in (0, 1]"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("replay_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// Priority for a transition collected before the latest detected change.
pub fn priority_pre_change(doe: f64, epsilon: f64) -> f64 {
    (2.0 * sigmoid(-doe.abs())).max(epsilon)
}

/// Priority for a transition from the current regime; `score` is the
/// detector score normalized to `[0, 1]`.
pub fn priority_post_change(td: f64, doe: f64, score: f64, epsilon: f64) -> f64 {
    let s = score.clamp(0.0, 1.0);
    let td_term = 2.0 * sigmoid(td.abs()) - 1.0;
    let doe_term = 2.0 * sigmoid(doe.abs()) - 1.0;
    ((1.0 - s) * td_term + s * doe_term).max(epsilon)
}

/// Proportional priority `|TD| + ε`.
pub fn priority_td(td: f64, epsilon: f64) -> f64 {
    td.abs() + epsilon
}

/// Sampling probabilities `p_k^α / Σ_i p_i^α`.
pub fn sampling_probabilities(priorities: &[f64], alpha: f64) -> Vec<f64> {
    let scaled: Vec<f64> = priorities.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = scaled.iter().sum();
    scaled.iter().map(|p| p / total).collect()
}

/// Importance weights `(N P(k))^-β`, divided by their maximum.
pub fn importance_weights(probabilities: &[f64], occupancy: usize, beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = probabilities
        .iter()
        .map(|p| (occupancy as f64 * p).powf(-beta))
        .collect();
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw.iter().map(|w| w / max).collect()
}

/// Complete binary tree of partial sums over a power-of-two number of leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            capacity,
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn leaf(&self, index: usize) -> f64 {
        self.nodes[self.leaves + index]
    }

    /// Sets a leaf and recomputes every ancestor from its two children.
    pub fn set(&mut self, index: usize, value: f64) {
        assert!(index < self.capacity, "leaf {index} out of range");
        debug_assert!(value >= 0.0 && value.is_finite());
        let mut node = self.leaves + index;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass` (`0 <= mass < total`).
    /// Zero-valued leaves are never returned while positive mass exists.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.max(0.0);
        let mut node = 1;
        while node < self.leaves {
            let (left, right) = (2 * node, 2 * node + 1);
            if (mass < self.nodes[left] && self.nodes[left] > 0.0) || self.nodes[right] <= 0.0 {
                node = left;
            } else {
                mass -= self.nodes[left];
                node = right;
            }
        }
        node - self.leaves
    }

    /// Checks that every internal node equals the sum of its children.
    pub fn max_inconsistency(&self) -> f64 {
        (1..self.leaves)
            .map(|n| (self.nodes[n] - self.nodes[2 * n] - self.nodes[2 * n + 1]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub insert_step: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance weights, max-normalized to 1 within the batch.
    pub weights: Vec<f64>,
    /// `P(k)` of each draw (uniform policy: `1/N`).
    pub probabilities: Vec<f64>,
    pub batch: TransitionBatch,
}

/// Mean and median of the stored priorities in one partition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartitionStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BufferStats {
    pub occupancy: usize,
    pub current_epoch: u64,
    pub pre_change: PartitionStats,
    pub post_change: PartitionStats,
}

fn partition_stats(mut values: Vec<f64>) -> PartitionStats {
    let count = values.len();
    if count == 0 {
        return PartitionStats::default();
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let mid = count / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    let median = if count % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().cloned().fold(f64::MIN, f64::max);
        0.5 * (lower + upper)
    };
    PartitionStats { count, mean, median }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    storage: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    next_slot: usize,
    current_epoch: u64,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            storage: Vec::with_capacity(config.capacity.min(1 << 20)),
            priorities: Vec::with_capacity(config.capacity.min(1 << 20)),
            tree: SumTree::new(config.capacity),
            config,
            next_slot: 0,
            current_epoch: 0,
            max_priority: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn current_epoch(&self) -> u64 {
        self.current_epoch
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    /// Stores a transition at the next ring slot with the running maximum
    /// priority (1 for an empty buffer). The transition's epoch is set to the
    /// buffer's current epoch. Returns the slot index.
    pub fn insert(&mut self, mut transition: Transition) -> usize {
        transition.epoch = self.current_epoch;
        let slot = self.next_slot;
        if slot == self.storage.len() {
            self.storage.push(transition);
            self.priorities.push(0.0);
        } else {
            self.storage[slot] = transition;
        }
        self.next_slot = (slot + 1) % self.config.capacity;
        let p = self.max_priority;
        self.set_priority(slot, p);
        slot
    }

    /// Sets a raw priority (floored at epsilon) and its tree leaf.
    pub fn set_priority(&mut self, index: usize, priority: f64) {
        let p = if priority.is_finite() {
            priority.max(self.config.epsilon)
        } else {
            self.max_priority
        };
        self.priorities[index] = p;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(index, p.powf(self.config.alpha));
    }

    /// Draws `batch_size` transitions. Prioritized policies split the total
    /// mass into equal segments and draw once per segment.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<SampledBatch> {
        let n = self.len();
        if batch_size == 0 || n < batch_size {
            return Err(Error::NotReady(format!(
                "buffer holds {n} transitions, batch needs {batch_size}"
            )));
        }
        let (indices, probabilities, weights) = match self.config.policy {
            ReplayPolicy::Uniform => {
                let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..n)).collect();
                (idx, vec![1.0 / n as f64; batch_size], vec![1.0; batch_size])
            }
            ReplayPolicy::Per | ReplayPolicy::Deer => {
                let total = self.tree.total();
                let segment = total / batch_size as f64;
                let mut idx = Vec::with_capacity(batch_size);
                let mut probs = Vec::with_capacity(batch_size);
                for i in 0..batch_size {
                    let lo = segment * i as f64;
                    let mass = (lo + rng.gen::<f64>() * segment).min(total * (1.0 - 1e-12));
                    let k = self.tree.find(mass).min(n - 1);
                    idx.push(k);
                    probs.push(self.tree.leaf(k) / total);
                }
                let w = importance_weights(&probs, n, self.config.beta);
                (idx, probs, w)
            }
        };
        let batch = self.gather(&indices)?;
        Ok(SampledBatch {
            indices,
            weights,
            probabilities,
            batch,
        })
    }

    /// Stacks the transitions at `indices` into a training batch.
    pub fn gather(&self, indices: &[usize]) -> Result<TransitionBatch> {
        let first = self
            .storage
            .first()
            .ok_or_else(|| Error::NotReady("buffer is empty".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let b = indices.len();
        let mut states = Vec::with_capacity(b * sd);
        let mut actions = Vec::with_capacity(b * ad);
        let mut next_states = Vec::with_capacity(b * sd);
        let mut rewards = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for &i in indices {
            let t = &self.storage[i];
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next_states.extend_from_slice(&t.next_state);
            rewards.push(t.reward);
            dones.push(t.done);
        }
        Ok(TransitionBatch {
            states: Matrix::from_vec(b, sd, states)?,
            actions: Matrix::from_vec(b, ad, actions)?,
            rewards,
            next_states: Matrix::from_vec(b, sd, next_states)?,
            dones,
        })
    }

    /// Recomputes priorities of just-used transitions.
    ///
    /// `doe` holds one discrepancy per index (zeros before any change was
    /// detected); `score` is the normalized detector score.
    pub fn refresh_priorities(&mut self, indices: &[usize], td: &[f64], doe: &[f64], score: f64) -> Result<()> {
        if td.len() != indices.len() || doe.len() != indices.len() {
            return Err(Error::shape(
                "ReplayBuffer::refresh_priorities",
                indices.len(),
                format!("td {} / doe {}", td.len(), doe.len()),
            ));
        }
        let eps = self.config.epsilon;
        for (j, &k) in indices.iter().enumerate() {
            let p = match self.config.policy {
                ReplayPolicy::Uniform => continue,
                ReplayPolicy::Per => priority_td(td[j], eps),
                ReplayPolicy::Deer => {
                    if self.storage[k].epoch < self.current_epoch {
                        priority_pre_change(doe[j], eps)
                    } else {
                        priority_post_change(td[j], doe[j], score, eps)
                    }
                }
            };
            self.set_priority(k, p);
        }
        Ok(())
    }

    /// Opens a new epoch. Transitions up to the change point become
    /// pre-change; those collected between the change point and the
    /// detection join the new epoch. Under the change-aware policy every
    /// pre-change priority is reset to 1 (zero discrepancy at capture).
    pub fn on_change_event(&mut self, event: &DetectionEvent) {
        self.current_epoch += 1;
        let current = self.current_epoch;
        let sweep = self.config.policy == ReplayPolicy::Deer;
        for k in 0..self.storage.len() {
            let t = &mut self.storage[k];
            if t.insert_step <= event.change_point {
                t.epoch = t.epoch.min(current - 1);
                if sweep {
                    self.set_priority(k, priority_pre_change(0.0, self.config.epsilon));
                }
            } else {
                t.epoch = current;
            }
        }
    }

    pub fn stats(&self) -> BufferStats {
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for (t, &p) in self.storage.iter().zip(&self.priorities) {
            if t.epoch < self.current_epoch {
                pre.push(p);
            } else {
                post.push(p);
            }
        }
        BufferStats {
            occupancy: self.len(),
            current_epoch: self.current_epoch,
            pre_change: partition_stats(pre),
            post_change: partition_stats(post),
        }
    }
}
