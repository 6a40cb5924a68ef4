//! Environment discrepancy: how far the current Q-function has moved from the
//! one frozen at the most recent detected change,
//! `DoE(s, a) = Q_now(s, a) - Q_before(s, a)`.

use crate::detector::DetectionEvent;
use crate::error::Result;
use crate::nn::Matrix;
use crate::sac::{CriticPair, SacAgent};

/// Frozen critics captured at a detection event.
#[derive(Debug, Clone, PartialEq)]
pub struct QSnapshot {
    critics: CriticPair,
    snapshot_step: u64,
    /// Regime index the frozen critics belong to.
    epoch: u64,
}

impl QSnapshot {
    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn snapshot_step(&self) -> u64 {
        self.snapshot_step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn q_values(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        self.critics.q_values(states, actions)
    }
}

/// Holds the most recent snapshot. Before the first event there is none and
/// every discrepancy is treated as zero.
#[derive(Debug, Clone, Default)]
pub struct DoeTracker {
    snapshot: Option<QSnapshot>,
    events_seen: u64,
}

impl DoeTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> Option<&QSnapshot> {
        self.snapshot.as_ref()
    }

    pub fn has_snapshot(&self) -> bool {
        self.snapshot.is_some()
    }

    /// Replaces any previous snapshot with a copy of the agent's online critics.
    pub fn capture(&mut self, agent: &SacAgent, event: &DetectionEvent) -> &QSnapshot {
        self.capture_critics(agent.snapshot_critics(), event)
    }

    pub fn capture_critics(&mut self, critics: CriticPair, event: &DetectionEvent) -> &QSnapshot {
        let epoch = self.events_seen;
        self.events_seen += 1;
        self.snapshot.insert(QSnapshot {
            critics,
            snapshot_step: event.detected_at,
            epoch,
        })
    }

    /// `None` until a change has been observed.
    pub fn doe(&self, agent: &SacAgent, state: &[f64], action: &[f64]) -> Result<Option<f64>> {
        match &self.snapshot {
            None => Ok(None),
            Some(snap) => {
                let now = agent.q_value(state, action)?;
                let before = snap.critics.q_value(state, action)?;
                Ok(Some(now - before))
            }
        }
    }

    /// Batched discrepancy, one value per row.
    pub fn doe_batch(&self, agent: &SacAgent, states: &Matrix, actions: &Matrix) -> Result<Option<Vec<f64>>> {
        match &self.snapshot {
            None => Ok(None),
            Some(snap) => {
                let now = agent.q_values(states, actions)?;
                let before = snap.q_values(states, actions)?;
                Ok(Some(now.iter().zip(&before).map(|(a, b)| a - b).collect()))
            }
        }
    }

    /// Like [`DoeTracker::doe_batch`] but zeros when no snapshot exists.
    pub fn doe_batch_or_zero(&self, agent: &SacAgent, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .doe_batch(agent, states, actions)?
            .unwrap_or_else(|| vec![0.0; states.rows()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::SacConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent() -> SacAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SacConfig {
            hidden: vec![6],
            ..Default::default()
        };
        SacAgent::new(2, 1, 1.0, cfg, &mut rng).unwrap()
    }

    fn event(step: u64) -> DetectionEvent {
        DetectionEvent {
            detected_at: step,
            change_point: step - 10,
            score: 0.6,
        }
    }

    #[test]
    fn no_snapshot_means_no_value() {
        let t = DoeTracker::new();
        assert_eq!(t.doe(&agent(), &[0.1, 0.2], &[0.3]).unwrap(), None);
        let s = Matrix::zeros(3, 2);
        let a = Matrix::zeros(3, 1);
        assert_eq!(t.doe_batch_or_zero(&agent(), &s, &a).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_at_capture() {
        let a = agent();
        let mut t = DoeTracker::new();
        t.capture(&a, &event(100));
        for s in [[0.0, 0.0], [1.0, -2.0], [0.3, 0.7]] {
            assert_eq!(t.doe(&a, &s, &[0.5]).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn zero_snapshot_exposes_online_q() {
        let mut a = agent();
        let mut zeroed = a.snapshot_critics();
        for p in zeroed.q1.params_mut().iter_mut().chain(zeroed.q2.params_mut()) {
            *p = 0.0;
        }
        let mut t = DoeTracker::new();
        t.capture_critics(zeroed, &event(50));
        let critics = a.critics_mut();
        for net in [&mut critics.q1, &mut critics.q2] {
            for p in net.params_mut() {
                *p = 0.0;
            }
            let last = net.num_layers() - 1;
            net.bias_mut(last)[0] = 3.5;
        }
        assert_eq!(t.doe(&a, &[0.4, 0.1], &[-0.2]).unwrap(), Some(3.5));
    }

    #[test]
    fn epochs_and_replacement() {
        let a = agent();
        let mut t = DoeTracker::new();
        let first = t.capture(&a, &event(100)).clone();
        let again = t.capture(&a, &event(100)).clone();
        assert_eq!(first.critics(), again.critics());
        assert_eq!(first.epoch(), 0);
        assert_eq!(again.epoch(), 1);
        assert_eq!(t.snapshot().unwrap().snapshot_step(), 100);
    }
}
