use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::run::stream_rng;
use crate::detector::{ChangeDetector, DetectionEvent, DetectorConfig};
use crate::error::Result;

/// Synthetic-stream evaluation of the change detector.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub detector: DetectorConfig,
    pub seeds: u64,
    pub steps: u64,
    /// Last step of the first regime in the shifted streams.
    pub change_at: u64,
    /// Mean shift in units of the noise standard deviation.
    pub shift: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            seeds: 20,
            steps: 10_000,
            change_at: 5_000,
            shift: 5.0,
        }
    }
}

/// `N(0, 1)` rewards, shifted by `shift` for steps after `change_at`.
pub fn synthetic_stream(seed: u64, steps: u64, change_at: Option<u64>, shift: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 16 + change_at.is_some() as u64);
    (1..=steps)
        .map(|t| {
            let x: f64 = StandardNormal.sample(&mut rng);
            match change_at {
                Some(c) if t > c => x + shift,
                _ => x,
            }
        })
        .collect()
}

/// Feeds a stream through a fresh detector and returns every event.
pub fn detect_stream(config: &DetectorConfig, rewards: &[f64], seed: u64) -> Result<Vec<DetectionEvent>> {
    let mut detector = ChangeDetector::new(config.clone(), seed)?;
    let mut events = Vec::new();
    for (i, &r) in rewards.iter().enumerate() {
        if let Some(eval) = detector.observe(i as u64 + 1, r)? {
            events.extend(eval.event);
        }
    }
    Ok(events)
}

/// A change at `truth` counts as found if some event places the change point
/// within one window of it and fires at most two windows after it.
pub fn found_change(events: &[DetectionEvent], truth: u64, window: u64) -> bool {
    events
        .iter()
        .any(|e| e.change_point.abs_diff(truth) <= window && e.detected_at <= truth + 2 * window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub seed: u64,
    pub events: Vec<DetectionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub stationary: Vec<StreamOutcome>,
    pub shifted: Vec<StreamOutcome>,
}

impl BenchReport {
    /// Stationary streams without a single event.
    pub fn quiet_streams(&self) -> usize {
        self.stationary.iter().filter(|o| o.events.is_empty()).count()
    }

    /// Shifted streams whose change was found in time.
    pub fn detected_streams(&self) -> usize {
        let m = self.config.detector.window as u64;
        self.shifted
            .iter()
            .filter(|o| found_change(&o.events, self.config.change_at, m))
            .count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("seed  stationary_events  shifted_events  first_change_point  first_detected_at\n");
        for (s, d) in self.stationary.iter().zip(&self.shifted) {
            let first = d.events.first();
            out.push_str(&format!(
                "{:>4}  {:>17}  {:>14}  {:>18}  {:>17}\n",
                s.seed,
                s.events.len(),
                d.events.len(),
                first.map_or("-".into(), |e| e.change_point.to_string()),
                first.map_or("-".into(), |e| e.detected_at.to_string()),
            ));
        }
        out.push_str(&format!(
            "stationary streams without events: {}/{}\nshifted streams detected in time: {}/{}\n",
            self.quiet_streams(),
            self.stationary.len(),
            self.detected_streams(),
            self.shifted.len()
        ));
        out
    }
}

/// Runs `config.seeds` stationary and shifted streams.
pub fn detect_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.detector.validate()?;
    if config.change_at >= config.steps {
        return Err(crate::error::Error::config("change_at", "must be smaller than steps"));
    }
    let run = |seed: u64, change: Option<u64>| -> Result<StreamOutcome> {
        let rewards = synthetic_stream(seed, config.steps, change, config.shift);
        Ok(StreamOutcome {
            seed,
            events: detect_stream(&config.detector, &rewards, seed)?,
        })
    };
    let stationary = (0..config.seeds)
        .into_par_iter()
        .map(|s| run(s, None))
        .collect::<Result<Vec<_>>>()?;
    let shifted = (0..config.seeds)
        .into_par_iter()
        .map(|s| run(s, Some(config.change_at)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        config: config.clone(),
        stationary,
        shifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_shift_starts_after_change() {
        let a = synthetic_stream(3, 100, None, 5.0);
        let b = synthetic_stream(3, 100, Some(40), 5.0);
        assert_eq!(a.len(), 100);
        assert_eq!(synthetic_stream(3, 100, None, 5.0), a);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&b[40..]) - mean(&b[..40]) > 3.0);
    }

    #[test]
    fn found_change_bounds() {
        let e = |cp, at| DetectionEvent {
            detected_at: at,
            change_point: cp,
            score: 0.6,
        };
        assert!(found_change(&[e(4600, 5100)], 5000, 500));
        assert!(found_change(&[e(5500, 6000)], 5000, 500));
        assert!(!found_change(&[e(5501, 6001)], 5000, 500));
        assert!(!found_change(&[e(3000, 3500)], 5000, 500));
        assert!(!found_change(&[], 5000, 500));
    }
}
