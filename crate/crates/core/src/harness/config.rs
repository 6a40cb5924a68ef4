use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::envs::{
    EnvSchedule, Environment, PendulumEnv, PendulumParams, PhysicalParams, PointMassEnv, PointMassParams,
};
use crate::error::{Error, Result};
use crate::replay::{ReplayConfig, ReplayPolicy};
use crate::sac::SacConfig;

/// Supported environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "point_mass",
        }
    }

    /// Parameters shifted by `offset` when the config does not list any.
    pub fn default_offset_params(self) -> Vec<String> {
        let names: &[&str] = match self {
            EnvKind::Pendulum => &["gravity", "damping"],
            EnvKind::PointMass => &["friction", "force_scale"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "point_mass" => Ok(EnvKind::PointMass),
            other => Err(Error::config("env", format!("unknown environment `{other}`"))),
        }
    }
}

/// Everything needed to reproduce a batch of runs.
///
/// Stored as a flat TOML table; module settings carry an `agent_`,
/// `replay_` or `detector_` prefix. Missing keys take the defaults below and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    /// Steps at which the dynamics change. Empty means stationary.
    pub change_steps: Vec<u64>,
    /// Relative offset applied per change, e.g. 1.0 doubles the parameters.
    pub offset: f64,
    /// Parameters the offset applies to; `None` uses the environment default.
    pub offset_params: Option<Vec<String>>,
    /// Overrides of the environment's base physical parameters, e.g.
    /// `base_params = { gravity = 5.0 }`.
    pub base_params: BTreeMap<String, f64>,
    pub policy: ReplayPolicy,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub log_interval: u64,
    pub out_dir: PathBuf,

    pub agent_hidden: Vec<usize>,
    pub agent_lr: f64,
    pub agent_gamma: f64,
    pub agent_tau: f64,
    pub agent_temperature: f64,
    pub agent_auto_temperature: bool,
    pub agent_batch_size: usize,
    pub agent_warmup: u64,

    pub replay_capacity: usize,
    pub replay_alpha: f64,
    pub replay_beta: f64,
    pub replay_epsilon: f64,
    pub replay_refresh_on_sample: bool,

    pub detector_window: usize,
    pub detector_samples: usize,
    pub detector_sample_len: usize,
    pub detector_threshold: f64,
    pub detector_iterations: usize,
    pub detector_stride: u64,
    pub detector_lr: f64,
    pub detector_hidden: Vec<usize>,
    pub detector_holdout_scoring: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let agent = SacConfig::default();
        let replay = ReplayConfig::default();
        let det = DetectorConfig::default();
        Self {
            env: EnvKind::Pendulum,
            change_steps: vec![30_000],
            offset: 1.0,
            offset_params: None,
            base_params: BTreeMap::new(),
            policy: replay.policy,
            steps: 60_000,
            seeds: vec![0, 1, 2, 3, 4],
            log_interval: 500,
            out_dir: PathBuf::from("runs"),
            agent_hidden: agent.hidden,
            agent_lr: agent.learning_rate,
            agent_gamma: agent.gamma,
            agent_tau: agent.tau,
            agent_temperature: agent.temperature,
            agent_auto_temperature: agent.auto_temperature,
            agent_batch_size: agent.batch_size,
            agent_warmup: agent.warmup_steps,
            replay_capacity: replay.capacity,
            replay_alpha: replay.alpha,
            replay_beta: replay.beta,
            replay_epsilon: replay.epsilon,
            replay_refresh_on_sample: replay.refresh_on_sample,
            detector_window: det.window,
            detector_samples: det.samples_per_window,
            detector_sample_len: det.sample_len,
            detector_threshold: det.threshold,
            detector_iterations: det.max_iterations,
            detector_stride: det.stride,
            detector_lr: det.learning_rate,
            detector_hidden: det.hidden,
            detector_holdout_scoring: det.holdout_scoring,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "experiment config".into(),
            message: e.message().to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn agent_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.agent_hidden.clone(),
            learning_rate: self.agent_lr,
            gamma: self.agent_gamma,
            tau: self.agent_tau,
            temperature: self.agent_temperature,
            auto_temperature: self.agent_auto_temperature,
            batch_size: self.agent_batch_size,
            warmup_steps: self.agent_warmup,
        }
    }

    pub fn replay_config(&self) -> ReplayConfig {
        ReplayConfig {
            capacity: self.replay_capacity,
            alpha: self.replay_alpha,
            beta: self.replay_beta,
            epsilon: self.replay_epsilon,
            policy: self.policy,
            refresh_on_sample: self.replay_refresh_on_sample,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            window: self.detector_window,
            samples_per_window: self.detector_samples,
            sample_len: self.detector_sample_len,
            threshold: self.detector_threshold,
            max_iterations: self.detector_iterations,
            stride: self.detector_stride,
            learning_rate: self.detector_lr,
            hidden: self.detector_hidden.clone(),
            holdout_scoring: self.detector_holdout_scoring,
        }
    }

    pub fn offset_param_names(&self) -> Vec<String> {
        self.offset_params
            .clone()
            .unwrap_or_else(|| self.env.default_offset_params())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.log_interval == 0 {
            return Err(Error::config("log_interval", "must be >= 1"));
        }
        if let Some(&last) = self.change_steps.iter().max() {
            if self.steps <= last {
                return Err(Error::config(
                    "steps",
                    format!("must exceed the last change step ({last}), got {}", self.steps),
                ));
            }
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        if self.change_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("change_steps", "must be strictly increasing"));
        }
        if !(self.offset >= 0.0) || !self.offset.is_finite() {
            return Err(Error::config("offset", "must be a finite value >= 0"));
        }
        if self.agent_hidden.is_empty() || self.agent_hidden.contains(&0) {
            return Err(Error::config(
                "agent_hidden",
                "needs at least one non-empty hidden layer",
            ));
        }
        if self.agent_batch_size == 0 {
            return Err(Error::config("agent_batch_size", "must be >= 1"));
        }
        if !(self.agent_lr > 0.0) {
            return Err(Error::config("agent_lr", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.agent_gamma) {
            return Err(Error::config("agent_gamma", "must lie in [0, 1]"));
        }
        if !(self.agent_tau > 0.0 && self.agent_tau <= 1.0) {
            return Err(Error::config("agent_tau", "must lie in (0, 1]"));
        }
        if !(self.agent_temperature > 0.0) {
            return Err(Error::config("agent_temperature", "must be > 0"));
        }
        if self.detector_window == 0 {
            return Err(Error::config("detector_window", "must be >= 1"));
        }
        self.replay_config().validate()?;
        self.detector_config().validate()?;
        // Surfaces unknown parameter names.
        self.build_env()?;
        Ok(())
    }

    fn base<P: PhysicalParams>(&self, mut params: P) -> Result<P> {
        for (name, &value) in &self.base_params {
            if !value.is_finite() {
                return Err(Error::config("base_params", format!("`{name}` must be finite")));
            }
            params
                .set(name, value)
                .map_err(|_| Error::config("base_params", format!("unknown parameter `{name}`")))?;
        }
        Ok(params)
    }

    /// Builds the environment with its change schedule.
    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        let names = self.offset_param_names();
        let env: Box<dyn Environment> = match self.env {
            EnvKind::Pendulum => {
                let base = self.base(PendulumParams::default())?;
                let schedule = EnvSchedule::with_offset(&self.change_steps, &base, &names, self.offset)
                    .map_err(|e| Error::config("offset_params", e.to_string()))?;
                Box::new(PendulumEnv::new(base, schedule)?)
            }
            EnvKind::PointMass => {
                let base = self.base(PointMassParams::default())?;
                let schedule = EnvSchedule::with_offset(&self.change_steps, &base, &names, self.offset)
                    .map_err(|e| Error::config("offset_params", e.to_string()))?;
                Box::new(PointMassEnv::new(base, schedule)?)
            }
        };
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("policy = \"per\"\nsteps = 5000\nchange_steps = [2500]\n").unwrap();
        assert_eq!(c.policy, ReplayPolicy::Per);
        assert_eq!(c.steps, 5000);
        assert_eq!(c.agent_gamma, 0.99);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig {
            env: EnvKind::PointMass,
            offset_params: Some(vec!["friction".into()]),
            ..ExperimentConfig::default()
        };
        c.base_params.insert("goal".into(), -0.25);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_toml_str("agent_hiden = [4]").unwrap_err();
        assert!(err.to_string().contains("agent_hiden"), "{err}");
    }

    fn field_of(c: ExperimentConfig) -> String {
        match c.validate().unwrap_err() {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn validation_names_fields() {
        let base = ExperimentConfig::default();
        assert_eq!(
            field_of(ExperimentConfig {
                steps: 30_000,
                ..base.clone()
            }),
            "steps"
        );
        assert_eq!(
            field_of(ExperimentConfig {
                seeds: vec![],
                ..base.clone()
            }),
            "seeds"
        );
        assert_eq!(
            field_of(ExperimentConfig {
                replay_alpha: 0.0,
                ..base.clone()
            }),
            "replay_alpha"
        );
        assert_eq!(
            field_of(ExperimentConfig {
                detector_threshold: 0.9,
                ..base.clone()
            }),
            "detector_threshold"
        );
        assert_eq!(
            field_of(ExperimentConfig {
                offset_params: Some(vec!["mass_ratio".into()]),
                ..base.clone()
            }),
            "offset_params"
        );
        let mut bad_base = base.clone();
        bad_base.base_params.insert("spring".into(), 1.0);
        assert_eq!(field_of(bad_base), "base_params");
        assert_eq!(field_of(ExperimentConfig { offset: -0.5, ..base }), "offset");
    }
}
