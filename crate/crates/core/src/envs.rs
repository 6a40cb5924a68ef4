//! Small continuous-control tasks whose physics switch at scheduled steps.
//!
//! Step indices are 1-based and global across episodes. A change scheduled
//! at `T` means steps `1..=T` run under the old regime and step `T + 1` is
//! the first one under the new regime.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named physical parameters that a schedule can override.
pub trait PhysicalParams: Clone + std::fmt::Debug {
    fn names() -> &'static [&'static str];
    fn get(&self, name: &str) -> Option<f64>;
    fn set(&mut self, name: &str, value: f64) -> Result<()>;
}

/// Scales every named parameter by `1 + offset_fraction`.
pub fn apply_offset<P: PhysicalParams>(base: &P, names: &[String], offset_fraction: f64) -> Result<P> {
    if !(offset_fraction >= 0.0) {
        return Err(Error::config("offset", "offset fraction must be >= 0"));
    }
    let mut out = base.clone();
    for name in names {
        let v = base
            .get(name)
            .ok_or_else(|| Error::config("offset_params", format!("unknown parameter `{name}`")))?;
        out.set(name, v * (1.0 + offset_fraction))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledChange {
    /// Last step of the previous regime.
    pub step: u64,
    pub overrides: BTreeMap<String, f64>,
}

/// Piecewise-constant parameter schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvSchedule {
    changes: Vec<ScheduledChange>,
    offset_fraction: f64,
}

impl EnvSchedule {
    pub fn stationary() -> Self {
        Self::default()
    }

    pub fn new(changes: Vec<ScheduledChange>) -> Result<Self> {
        if changes.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::config(
                "change_steps",
                "change steps must be strictly increasing",
            ));
        }
        Ok(Self {
            changes,
            offset_fraction: 0.0,
        })
    }

    /// Regime `i` (after the `i`-th change) uses `apply_offset(base, i * offset_fraction)`.
    pub fn with_offset<P: PhysicalParams>(
        change_steps: &[u64],
        base: &P,
        names: &[String],
        offset_fraction: f64,
    ) -> Result<Self> {
        let mut changes = Vec::with_capacity(change_steps.len());
        for (i, &step) in change_steps.iter().enumerate() {
            let shifted = apply_offset(base, names, offset_fraction * (i + 1) as f64)?;
            let overrides = names.iter().map(|n| (n.clone(), shifted.get(n).unwrap())).collect();
            changes.push(ScheduledChange { step, overrides });
        }
        let mut schedule = Self::new(changes)?;
        schedule.offset_fraction = offset_fraction;
        Ok(schedule)
    }

    pub fn changes(&self) -> &[ScheduledChange] {
        &self.changes
    }

    pub fn change_steps(&self) -> Vec<u64> {
        self.changes.iter().map(|c| c.step).collect()
    }

    pub fn offset_fraction(&self) -> f64 {
        self.offset_fraction
    }
}

/// Tracks which regime is active and applies overrides on crossing.
#[derive(Debug, Clone)]
struct Regime<P> {
    base: P,
    current: P,
    schedule: EnvSchedule,
    epoch: usize,
}

impl<P: PhysicalParams> Regime<P> {
    fn new(base: P, schedule: EnvSchedule) -> Result<Self> {
        for change in schedule.changes() {
            for name in change.overrides.keys() {
                if base.get(name).is_none() {
                    return Err(Error::config("schedule", format!("unknown parameter `{name}`")));
                }
            }
        }
        Ok(Self {
            current: base.clone(),
            base,
            schedule,
            epoch: 0,
        })
    }

    /// Brings the active parameters up to date for global step `t`.
    fn advance_to(&mut self, t: u64) {
        while let Some(change) = self.schedule.changes.get(self.epoch) {
            if t <= change.step {
                break;
            }
            for (name, &value) in &change.overrides {
                self.current
                    .set(name, value)
                    .expect("override names validated at construction");
            }
            self.epoch += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Failure termination; time-limit truncation is reported separately.
    pub done: bool,
    pub truncated: bool,
    pub env_epoch: usize,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Actions are clipped to `[-action_scale, action_scale]` per dimension.
    fn action_scale(&self) -> f64;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
    fn epoch(&self) -> usize;
    fn global_step(&self) -> u64;
    fn schedule(&self) -> &EnvSchedule;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            damping: 0.05,
        }
    }
}

impl PhysicalParams for PendulumParams {
    fn names() -> &'static [&'static str] {
        &["gravity", "mass", "length", "damping"]
    }

    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "gravity" => Some(self.gravity),
            "mass" => Some(self.mass),
            "length" => Some(self.length),
            "damping" => Some(self.damping),
            _ => None,
        }
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "gravity" => &mut self.gravity,
            "mass" => &mut self.mass,
            "length" => &mut self.length,
            "damping" => &mut self.damping,
            _ => return Err(Error::config("schedule", format!("unknown parameter `{name}`"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Torque-limited swing-up. `theta = 0` is upright, `theta = pi` hangs down.
#[derive(Debug, Clone)]
pub struct PendulumEnv {
    theta: f64,
    omega: f64,
    regime: Regime<PendulumParams>,
    global_step: u64,
    episode_step: usize,
}

impl PendulumEnv {
    /// Control period; each step integrates `SUBSTEPS` semi-implicit Euler substeps.
    pub const DT: f64 = 0.05;
    pub const SUBSTEPS: usize = 20;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const EPISODE_STEPS: usize = 200;

    pub fn new(base: PendulumParams, schedule: EnvSchedule) -> Result<Self> {
        Ok(Self {
            theta: PI,
            omega: 0.0,
            regime: Regime::new(base, schedule)?,
            global_step: 0,
            episode_step: 0,
        })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.regime.current
    }

    pub fn base_params(&self) -> &PendulumParams {
        &self.regime.base
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }

    pub fn angular_velocity(&self) -> f64 {
        self.omega
    }

    /// Places the pendulum at an explicit state without touching step counters.
    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = theta;
        self.omega = omega;
    }

    /// `½ m l² ω² + m g l (1 + cos θ)` under the active parameters.
    pub fn energy(&self) -> f64 {
        let p = self.params();
        0.5 * p.mass * p.length * p.length * self.omega * self.omega
            + p.mass * p.gravity * p.length * (1.0 + self.theta.cos())
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut x = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

impl Environment for PendulumEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn action_scale(&self) -> f64 {
        Self::MAX_TORQUE
    }

    fn max_episode_steps(&self) -> usize {
        Self::EPISODE_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // gen_range(-pi..pi) is half-open on the other side; flip to get (-pi, pi].
        self.theta = -rng.gen_range(-PI..PI);
        self.omega = rng.gen_range(-1.0..=1.0);
        self.episode_step = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let t = self.global_step + 1;
        self.regime.advance_to(t);
        self.global_step = t;
        self.episode_step += 1;

        let u = action
            .first()
            .copied()
            .unwrap_or(0.0)
            .clamp(-Self::MAX_TORQUE, Self::MAX_TORQUE);
        let p = self.regime.current.clone();
        let th = wrap_angle(self.theta);
        let cost = th * th + 0.1 * self.omega * self.omega + 0.001 * u * u;

        let inertia = p.mass * p.length * p.length;
        let h = Self::DT / Self::SUBSTEPS as f64;
        for _ in 0..Self::SUBSTEPS {
            let accel = p.gravity / p.length * self.theta.sin() - p.damping * self.omega / inertia + u / inertia;
            self.omega = (self.omega + h * accel).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            self.theta += h * self.omega;
        }
        self.theta = wrap_angle(self.theta);

        StepResult {
            next_state: self.observation(),
            reward: -cost,
            done: false,
            truncated: self.episode_step >= Self::EPISODE_STEPS,
            env_epoch: self.regime.epoch,
        }
    }

    fn epoch(&self) -> usize {
        self.regime.epoch
    }

    fn global_step(&self) -> u64 {
        self.global_step
    }

    fn schedule(&self) -> &EnvSchedule {
        &self.regime.schedule
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassParams {
    pub friction: f64,
    pub force_scale: f64,
    pub goal: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            friction: 1.0,
            force_scale: 2.0,
            goal: 0.5,
        }
    }
}

impl PhysicalParams for PointMassParams {
    fn names() -> &'static [&'static str] {
        &["friction", "force_scale", "goal"]
    }

    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "friction" => Some(self.friction),
            "force_scale" => Some(self.force_scale),
            "goal" => Some(self.goal),
            _ => None,
        }
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "friction" => &mut self.friction,
            "force_scale" => &mut self.force_scale,
            "goal" => &mut self.goal,
            _ => return Err(Error::config("schedule", format!("unknown parameter `{name}`"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Unit mass on the track `[-1, 1]` pushed toward a goal against viscous friction.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    position: f64,
    velocity: f64,
    regime: Regime<PointMassParams>,
    global_step: u64,
    episode_step: usize,
}

impl PointMassEnv {
    pub const DT: f64 = 0.05;
    pub const TRACK: f64 = 1.0;
    pub const EPISODE_STEPS: usize = 150;

    pub fn new(base: PointMassParams, schedule: EnvSchedule) -> Result<Self> {
        if base.friction < 0.0 {
            return Err(Error::config("friction", "friction must be >= 0"));
        }
        Ok(Self {
            position: 0.0,
            velocity: 0.0,
            regime: Regime::new(base, schedule)?,
            global_step: 0,
            episode_step: 0,
        })
    }

    pub fn params(&self) -> &PointMassParams {
        &self.regime.current
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity, self.params().goal - self.position]
    }
}

impl Environment for PointMassEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn action_scale(&self) -> f64 {
        1.0
    }

    fn max_episode_steps(&self) -> usize {
        Self::EPISODE_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = rng.gen_range(-Self::TRACK..=Self::TRACK);
        self.velocity = 0.0;
        self.episode_step = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let t = self.global_step + 1;
        self.regime.advance_to(t);
        self.global_step = t;
        self.episode_step += 1;

        let u = action.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        let p = self.regime.current.clone();
        let accel = p.force_scale * u - p.friction * self.velocity;
        self.velocity += Self::DT * accel;
        self.position += Self::DT * self.velocity;
        if self.position.abs() > Self::TRACK {
            self.position = self.position.clamp(-Self::TRACK, Self::TRACK);
            self.velocity = 0.0;
        }
        let reward = -(self.position - p.goal).abs() - 0.01 * u * u;

        StepResult {
            next_state: self.observation(),
            reward,
            done: false,
            truncated: self.episode_step >= Self::EPISODE_STEPS,
            env_epoch: self.regime.epoch,
        }
    }

    fn epoch(&self) -> usize {
        self.regime.epoch
    }

    fn global_step(&self) -> u64 {
        self.global_step
    }

    fn schedule(&self) -> &EnvSchedule {
        &self.regime.schedule
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn offset_arithmetic() {
        let base = PendulumParams {
            damping: 0.1,
            ..Default::default()
        };
        let same = apply_offset(&base, &names(&["gravity", "damping"]), 0.0).unwrap();
        assert_eq!(same, base);
        let tripled = apply_offset(&base, &names(&["damping"]), 2.0).unwrap();
        assert!((tripled.damping - 0.3).abs() < 1e-15);
        let heavier = apply_offset(&base, &names(&["gravity"]), 0.5).unwrap();
        assert_eq!(heavier.gravity, 15.0);
        assert!(apply_offset(&base, &names(&["gravity"]), -0.1).is_err());
        assert!(apply_offset(&base, &names(&["viscosity"]), 0.5).is_err());
    }

    #[test]
    fn schedule_rejects_unsorted_changes() {
        let c = |step| ScheduledChange {
            step,
            overrides: BTreeMap::new(),
        };
        assert!(EnvSchedule::new(vec![c(10), c(10)]).is_err());
        assert!(EnvSchedule::new(vec![c(10), c(5)]).is_err());
        assert!(EnvSchedule::new(vec![c(5), c(10)]).is_ok());
    }

    #[test]
    fn reset_is_seeded_and_keeps_epoch() {
        let base = PendulumParams::default();
        let schedule = EnvSchedule::with_offset(&[3], &base, &names(&["gravity"]), 1.0).unwrap();
        let mut env = PendulumEnv::new(base, schedule).unwrap();
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b);
        for _ in 0..5 {
            env.step(&[0.0]);
        }
        assert_eq!(env.epoch(), 1);
        env.reset(7);
        assert_eq!(env.epoch(), 1);
    }

    #[test]
    fn hanging_pendulum_is_a_fixed_point() {
        let base = PendulumParams {
            damping: 0.0,
            ..Default::default()
        };
        let mut env = PendulumEnv::new(base, EnvSchedule::stationary()).unwrap();
        env.reset(0);
        env.set_state(PI, 0.0);
        for _ in 0..100 {
            let r = env.step(&[0.0]);
            assert!((r.next_state[0] + 1.0).abs() < 1e-9);
            assert!(r.next_state[1].abs() < 1e-9);
            assert!(r.next_state[2].abs() < 1e-9);
        }
    }

    #[test]
    fn gravity_switches_after_the_scheduled_step() {
        let base = PendulumParams::default();
        let schedule = EnvSchedule::with_offset(&[100], &base, &names(&["gravity"]), 0.5).unwrap();
        let mut env = PendulumEnv::new(base, schedule).unwrap();
        env.reset(1);
        for t in 1..=100u64 {
            let r = env.step(&[0.5]);
            assert_eq!(env.global_step(), t);
            assert_eq!(env.params().gravity, 10.0);
            assert_eq!(r.env_epoch, 0);
        }
        let r = env.step(&[0.5]);
        assert_eq!(env.params().gravity, 15.0);
        assert_eq!(r.env_epoch, 1);
    }

    #[test]
    fn epoch_increments_once_per_change() {
        let base = PointMassParams::default();
        let schedule = EnvSchedule::with_offset(&[5, 9, 20], &base, &names(&["friction"]), 1.0).unwrap();
        let mut env = PointMassEnv::new(base, schedule).unwrap();
        env.reset(3);
        let epochs: Vec<usize> = (0..25).map(|_| env.step(&[0.1]).env_epoch).collect();
        for (i, e) in epochs.iter().enumerate() {
            let t = i as u64 + 1;
            let expected = [5u64, 9, 20].iter().filter(|&&c| t > c).count();
            assert_eq!(*e, expected, "step {t}");
        }
        assert!((env.params().friction - 4.0).abs() < 1e-12);
    }

    #[test]
    fn undamped_pendulum_conserves_energy() {
        let base = PendulumParams {
            damping: 0.0,
            ..Default::default()
        };
        let mut env = PendulumEnv::new(base, EnvSchedule::stationary()).unwrap();
        for (theta, omega) in [(PI / 2.0, 0.0), (0.1, 0.0), (PI, 7.0), (PI - 0.2, 0.0)] {
            env.set_state(theta, omega);
            let e0 = env.energy();
            for _ in 0..200 {
                env.step(&[0.0]);
                let e = env.energy();
                assert!((e - e0).abs() / e0 < 0.01, "energy drift {e} vs {e0}");
            }
        }
    }

    #[test]
    fn state_stays_on_unit_circle_and_speed_is_clipped() {
        let mut env = PendulumEnv::new(PendulumParams::default(), EnvSchedule::stationary()).unwrap();
        env.reset(9);
        for i in 0..1000 {
            let r = env.step(&[if i % 50 < 25 { 5.0 } else { -5.0 }]);
            let norm = r.next_state[0].hypot(r.next_state[1]);
            assert!((norm - 1.0).abs() < 1e-9);
            assert!(r.next_state[2].abs() <= PendulumEnv::MAX_SPEED);
            assert!(r.reward.is_finite());
        }
    }

    #[test]
    fn truncation_flags_episode_end() {
        let mut env = PointMassEnv::new(PointMassParams::default(), EnvSchedule::stationary()).unwrap();
        env.reset(0);
        for i in 1..=PointMassEnv::EPISODE_STEPS {
            let r = env.step(&[1.0]);
            assert!(!r.done);
            assert_eq!(r.truncated, i == PointMassEnv::EPISODE_STEPS);
            assert!(env.position().abs() <= PointMassEnv::TRACK);
        }
    }

    #[test]
    fn wrap_angle_range() {
        for x in [-10.0, -PI, 0.0, PI, 3.5, 20.0] {
            let w = wrap_angle(x);
            assert!(w > -PI && w <= PI, "{x} -> {w}");
            assert!(((w - x) / (2.0 * PI)).fract().abs() < 1e-9 || ((w - x) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
