//! Online change-point detection on the scalar reward stream.
//!
//! The last `2m` rewards are split into a reference window (older half,
//! label 0) and a test window (newer half, label 1). Each evaluation draws
//! `n` contiguous subsequences of length `L` from each window, trains a
//! fresh classifier to tell them apart, and turns its outputs into a
//! Jensen-Shannon style score in `[0, ln 2]`. A score at or above the
//! threshold reports a change `m` steps in the past.

use std::collections::VecDeque;
use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Matrix, Mlp};

/// Probabilities are clamped to this distance from 0 and 1 inside logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Window size `m` in steps.
    pub window: usize,
    /// Subsequences drawn per window.
    pub samples_per_window: usize,
    /// Subsequence length `L`.
    pub sample_len: usize,
    /// Detection threshold on the raw score.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Steps between evaluations.
    pub stride: u64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    /// Score on a second, independent draw of subsequences from the same
    /// windows instead of the classifier's own training samples.
    pub holdout_scoring: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 500,
            samples_per_window: 10,
            sample_len: 50,
            threshold: 0.5,
            max_iterations: 50,
            stride: 50,
            learning_rate: 1e-2,
            hidden: vec![100, 100],
            holdout_scoring: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_len == 0 || self.sample_len > self.window {
            return Err(Error::config("detector_sample_len", "must satisfy 1 <= L <= window"));
        }
        if !(self.threshold > 0.0 && self.threshold <= LN_2) {
            return Err(Error::config("detector_threshold", "must lie in (0, ln 2]"));
        }
        if self.stride == 0 {
            return Err(Error::config("detector_stride", "must be >= 1"));
        }
        if self.samples_per_window == 0 {
            return Err(Error::config("detector_samples", "must be >= 1"));
        }
        if self.hidden.is_empty() {
            return Err(Error::config(
                "detector_hidden",
                "at least one hidden layer is required",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub detected_at: u64,
    /// `detected_at - window`.
    pub change_point: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Score clamped to `[0, ln 2]`.
    pub score: f64,
    pub event: Option<DetectionEvent>,
}

/// Subsequences drawn from the two windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSamples {
    pub reference: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

/// A trained window classifier; `predict` returns `f(r)`, the probability of label 1.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Mlp,
    center: f64,
    scale: f64,
    /// Loss before each accepted iterate, non-increasing.
    pub losses: Vec<f64>,
}

impl Classifier {
    fn inputs(&self, samples: &[Vec<f64>]) -> Result<Matrix> {
        let mut m = Matrix::from_rows(samples)?;
        for v in m.data_mut() {
            *v = (*v - self.center) / self.scale;
        }
        Ok(m)
    }

    pub fn predict(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.inputs(samples)?)?.into_vec())
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

fn clamp_prob(f: f64) -> f64 {
    f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Cross-entropy of the window classifier:
/// `-(1/n_rf) Σ_ref log(1 - f) - (1/n_te) Σ_test log f`.
pub fn classifier_loss(f_reference: &[f64], f_test: &[f64]) -> f64 {
    let rf = f_reference.iter().map(|&f| (1.0 - clamp_prob(f)).ln()).sum::<f64>() / f_reference.len() as f64;
    let te = f_test.iter().map(|&f| clamp_prob(f).ln()).sum::<f64>() / f_test.len() as f64;
    -rf - te
}

/// Raw density-ratio score
/// `ln 2 + (1/2n_te) Σ_test log f + (1/2n_rf) Σ_ref log(1 - f)`.
pub fn js_score(f_test: &[f64], f_reference: &[f64]) -> f64 {
    let te = f_test.iter().map(|&f| clamp_prob(f).ln()).sum::<f64>() / (2.0 * f_test.len() as f64);
    let rf = f_reference.iter().map(|&f| (1.0 - clamp_prob(f)).ln()).sum::<f64>() / (2.0 * f_reference.len() as f64);
    LN_2 + te + rf
}

/// Clamps a raw score into `[0, ln 2]`.
pub fn clamp_score(score: f64) -> f64 {
    if score.is_nan() {
        return 0.0;
    }
    score.clamp(0.0, LN_2)
}

/// Maps a raw score onto `[0, 1]` for use as a mixing weight.
pub fn normalized_score(score: f64) -> f64 {
    (clamp_score(score) / LN_2).clamp(0.0, 1.0)
}

/// Trains a fresh classifier with full-batch Adam. Training stops early
/// (keeping the previous parameters) as soon as the loss would increase.
pub fn train_classifier<R: Rng + ?Sized>(
    config: &DetectorConfig,
    samples: &WindowSamples,
    rng: &mut R,
) -> Result<Classifier> {
    let len = config.sample_len;
    let all = samples.reference.iter().chain(&samples.test);
    let count = (samples.reference.len() + samples.test.len()) * len;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in all {
        if s.len() != len {
            return Err(Error::shape("train_classifier sample", len, s.len()));
        }
        for &v in s {
            sum += v;
            sum_sq += v * v;
        }
    }
    let center = sum / count as f64;
    let var = (sum_sq / count as f64 - center * center).max(0.0);
    let scale = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };

    let mut sizes = vec![len];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let net = Mlp::new(&sizes, Activation::Relu, Activation::Sigmoid, rng)?;
    let mut clf = Classifier {
        net,
        center,
        scale,
        losses: Vec::new(),
    };

    let n_rf = samples.reference.len();
    let n_te = samples.test.len();
    let rows: Vec<Vec<f64>> = samples.reference.iter().chain(&samples.test).cloned().collect();
    let x = clf.inputs(&rows)?;
    let mut adam = Adam::new(clf.net.num_params(), config.learning_rate);
    let mut previous: Option<(Vec<f64>, f64)> = None;
    for iteration in 0..=config.max_iterations {
        let cache = clf.net.forward_cached(&x)?;
        let f = cache.output().data();
        let loss = classifier_loss(&f[..n_rf], &f[n_rf..]);
        if let Some((params, prev_loss)) = &previous {
            if loss > *prev_loss {
                clf.net.set_params(params)?;
                break;
            }
        }
        clf.losses.push(loss);
        if iteration == config.max_iterations {
            break;
        }
        let mut upstream = Matrix::zeros(n_rf + n_te, 1);
        for (k, &fk) in f.iter().enumerate() {
            let p = clamp_prob(fk);
            upstream.data_mut()[k] = if k < n_rf {
                1.0 / (n_rf as f64 * (1.0 - p))
            } else {
                -1.0 / (n_te as f64 * p)
            };
        }
        let (grads, _) = clf.net.backward(&cache, &upstream)?;
        previous = Some((clf.net.params().to_vec(), loss));
        adam.step(clf.net.params_mut(), &grads)?;
    }
    Ok(clf)
}

/// Streaming detector over a reward sequence.
#[derive(Debug, Clone)]
pub struct ChangeDetector {
    config: DetectorConfig,
    rewards: VecDeque<f64>,
    pushed: u64,
    latest_score: f64,
    /// No event may fire before this step.
    quiet_until: u64,
    seed: u64,
}

impl ChangeDetector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rewards: VecDeque::with_capacity(2 * config.window),
            config,
            pushed: 0,
            latest_score: 0.0,
            quiet_until: 0,
            seed,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn push_reward(&mut self, reward: f64) {
        if self.rewards.len() == 2 * self.config.window {
            self.rewards.pop_front();
        }
        self.rewards.push_back(reward);
        self.pushed += 1;
    }

    pub fn rewards_seen(&self) -> u64 {
        self.pushed
    }

    pub fn is_ready(&self) -> bool {
        self.rewards.len() == 2 * self.config.window
    }

    /// Older half of the buffered rewards (empty until ready).
    pub fn reference_window(&self) -> Vec<f64> {
        if !self.is_ready() {
            return Vec::new();
        }
        self.rewards.iter().take(self.config.window).copied().collect()
    }

    /// Newer half of the buffered rewards (empty until ready).
    pub fn test_window(&self) -> Vec<f64> {
        if !self.is_ready() {
            return Vec::new();
        }
        self.rewards.iter().skip(self.config.window).copied().collect()
    }

    /// Latest clamped score, held between evaluations.
    pub fn latest_score(&self) -> f64 {
        self.latest_score
    }

    /// Draws `n` contiguous subsequences at uniform offsets inside each window.
    pub fn draw_samples<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WindowSamples> {
        if !self.is_ready() {
            return Err(Error::NotReady(format!(
                "detector holds {} of {} rewards",
                self.rewards.len(),
                2 * self.config.window
            )));
        }
        let (m, len) = (self.config.window, self.config.sample_len);
        let (reference, test) = self.rewards.as_slices();
        let buffered: Vec<f64> = reference.iter().chain(test).copied().collect();
        let mut draw = |base: usize| -> Vec<Vec<f64>> {
            (0..self.config.samples_per_window)
                .map(|_| {
                    let start = base + rng.gen_range(0..=m - len);
                    buffered[start..start + len].to_vec()
                })
                .collect()
        };
        let reference = draw(0);
        let test = draw(m);
        Ok(WindowSamples { reference, test })
    }

    fn rng_for(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }

    /// Trains a fresh classifier on the current windows and scores them.
    /// Returns `(0, None)` until both windows are full.
    pub fn evaluate(&mut self, step: u64) -> Result<Evaluation> {
        if !self.is_ready() {
            return Ok(Evaluation {
                score: 0.0,
                event: None,
            });
        }
        let mut rng = self.rng_for(step);
        let samples = self.draw_samples(&mut rng)?;
        let clf = train_classifier(&self.config, &samples, &mut rng)?;
        let scored = if self.config.holdout_scoring {
            self.draw_samples(&mut rng)?
        } else {
            samples
        };
        let raw = js_score(&clf.predict(&scored.test)?, &clf.predict(&scored.reference)?);
        self.latest_score = clamp_score(raw);

        let m = self.config.window as u64;
        let event = if raw >= self.config.threshold && step >= self.quiet_until && step >= m {
            self.quiet_until = step + 2 * m;
            Some(DetectionEvent {
                detected_at: step,
                change_point: step - m,
                score: raw,
            })
        } else {
            None
        };
        Ok(Evaluation {
            score: self.latest_score,
            event,
        })
    }

    /// Pushes the reward observed at `step` and evaluates on stride boundaries.
    pub fn observe(&mut self, step: u64, reward: f64) -> Result<Option<Evaluation>> {
        self.push_reward(reward);
        if step.is_multiple_of(self.config.stride) {
            self.evaluate(step).map(Some)
        } else {
            Ok(None)
        }
    }
}
