//! Soft actor-critic with a tanh-squashed Gaussian policy and twin critics.
//!
//! "The" Q-value everywhere in this crate is `min(Q1, Q2)`: TD errors, the
//! actor objective and the environment-discrepancy metric all use it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{softplus, Activation, Adam, ForwardCache, Matrix, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub tau: f64,
    pub temperature: f64,
    pub auto_temperature: bool,
    pub batch_size: usize,
    pub warmup_steps: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            temperature: 0.2,
            auto_temperature: false,
            batch_size: 256,
            warmup_steps: 1000,
        }
    }
}

/// Column-stacked minibatch; row `k` is transition `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        for (name, rows) in [
            ("states", self.states.rows()),
            ("actions", self.actions.rows()),
            ("next_states", self.next_states.rows()),
            ("dones", self.dones.len()),
        ] {
            if rows != n {
                return Err(Error::shape("TransitionBatch", format!("{n} {name}"), rows));
            }
        }
        Ok(())
    }
}

/// Twin Q-networks over `state ‖ action`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl CriticPair {
    fn both(&self, inputs: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.q1.forward(inputs)?.into_vec(), self.q2.forward(inputs)?.into_vec()))
    }

    /// `min(Q1, Q2)` for each row.
    pub fn q_values(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let inputs = states.hcat(actions)?;
        let (a, b) = self.both(&inputs)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let s = Matrix::from_rows(&[state])?;
        let a = Matrix::from_rows(&[action])?;
        Ok(self.q_values(&s, &a)?[0])
    }
}

/// Reparameterized policy draw for a batch of states.
struct PolicySample {
    actions: Matrix,
    log_probs: Vec<f64>,
    pre_tanh: Matrix,
    noise: Matrix,
    std: Matrix,
    /// log-std was inside the clamp range (gradient passes through).
    log_std_free: Vec<bool>,
    cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    /// TD error per transition, evaluated before the gradient step.
    pub td_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    action_scale: f64,
    actor: Mlp,
    critics: CriticPair,
    targets: CriticPair,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    log_temperature: f64,
    temperature_opt: Adam,
    target_entropy: f64,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        action_scale: f64,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.hidden.is_empty() {
            return Err(Error::config("agent_hidden", "at least one hidden layer is required"));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::config("agent_temperature", "must be > 0"));
        }
        let actor = Mlp::new(
            &layer_sizes(obs_dim, &config.hidden, 2 * act_dim),
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let critic_sizes = layer_sizes(obs_dim + act_dim, &config.hidden, 1);
        let q1 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let q2 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let critics = CriticPair { q1, q2 };
        Ok(Self {
            obs_dim,
            act_dim,
            action_scale,
            actor_opt: Adam::new(actor.num_params(), config.learning_rate),
            q1_opt: Adam::new(critics.q1.num_params(), config.learning_rate),
            q2_opt: Adam::new(critics.q2.num_params(), config.learning_rate),
            targets: critics.clone(),
            actor,
            critics,
            log_temperature: config.temperature.ln(),
            temperature_opt: Adam::new(1, config.learning_rate),
            target_entropy: -(act_dim as f64),
            config,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut CriticPair {
        &mut self.critics
    }

    pub fn targets(&self) -> &CriticPair {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut CriticPair {
        &mut self.targets
    }

    /// Squashed action for one state; `deterministic` returns `scale * tanh(mean)`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        let out = self.actor.forward(&Matrix::from_rows(&[state])?)?;
        let row = out.row(0);
        Ok((0..self.act_dim)
            .map(|i| {
                let mean = row[i];
                let u = if deterministic {
                    mean
                } else {
                    let log_std = row[self.act_dim + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let eps: f64 = rng.sample(StandardNormal);
                    mean + log_std.exp() * eps
                };
                self.action_scale * u.tanh()
            })
            .collect())
    }

    /// `min(Q1, Q2)` under the online critics.
    pub fn q_values(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        self.critics.q_values(states, actions)
    }

    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.critics.q_value(state, action)
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let data = (0..rows * self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(rows, self.act_dim, data).expect("sized above")
    }

    fn sample_policy(&self, states: &Matrix, noise: Matrix) -> Result<PolicySample> {
        if noise.rows() != states.rows() || noise.cols() != self.act_dim {
            return Err(Error::shape(
                "SacAgent noise",
                format!("{}x{}", states.rows(), self.act_dim),
                format!("{}x{}", noise.rows(), noise.cols()),
            ));
        }
        let cache = self.actor.forward_cached(states)?;
        let out = cache.output();
        let (n, d) = (states.rows(), self.act_dim);
        let mut actions = Matrix::zeros(n, d);
        let mut pre_tanh = Matrix::zeros(n, d);
        let mut std = Matrix::zeros(n, d);
        let mut log_std_free = vec![false; n * d];
        let mut log_probs = vec![0.0; n];
        let log_scale = self.action_scale.ln();
        for k in 0..n {
            let row = out.row(k);
            for i in 0..d {
                let raw = row[d + i];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                log_std_free[k * d + i] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let sigma = log_std.exp();
                let eps = noise.get(k, i);
                let u = row[i] + sigma * eps;
                pre_tanh.set(k, i, u);
                std.set(k, i, sigma);
                actions.set(k, i, self.action_scale * u.tanh());
                // log N(u; mean, sigma) minus log|d a / d u|, with
                // log(1 - tanh²u) = 2 (log 2 - u - softplus(-2u)).
                let log_jacobian = log_scale + 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
                log_probs[k] += -0.5 * eps * eps - log_std - HALF_LOG_2PI - log_jacobian;
            }
        }
        Ok(PolicySample {
            actions,
            log_probs,
            pre_tanh,
            noise,
            std,
            log_std_free,
            cache,
        })
    }

    /// Bootstrapped targets `r + γ (1 - done) (min Q'(s', a') - α log π(a'|s'))`.
    fn targets_for(&self, batch: &TransitionBatch, noise: Matrix) -> Result<Vec<f64>> {
        let next = self.sample_policy(&batch.next_states, noise)?;
        let q_next = self.targets.q_values(&batch.next_states, &next.actions)?;
        let temp = self.temperature();
        Ok((0..batch.len())
            .map(|k| {
                let cont = if batch.dones[k] { 0.0 } else { 1.0 };
                batch.rewards[k] + self.config.gamma * cont * (q_next[k] - temp * next.log_probs[k])
            })
            .collect())
    }

    /// Signed TD errors with `a' ~ π(·|s')`. Does not modify any parameters.
    pub fn compute_td<R: Rng + ?Sized>(&self, batch: &TransitionBatch, rng: &mut R) -> Result<Vec<f64>> {
        let noise = self.draw_noise(batch.len(), rng);
        self.compute_td_with_noise(batch, noise)
    }

    /// [`SacAgent::compute_td`] with the next-action noise supplied by the caller.
    pub fn compute_td_with_noise(&self, batch: &TransitionBatch, noise: Matrix) -> Result<Vec<f64>> {
        batch.validate()?;
        let y = self.targets_for(batch, noise)?;
        let q = self.q_values(&batch.states, &batch.actions)?;
        Ok(y.iter().zip(&q).map(|(y, q)| y - q).collect())
    }

    /// Importance-weighted critic loss `Σ_j mean_k w_k (Q_j - y)²` for given targets.
    fn critic_loss_at(&self, inputs: &Matrix, targets: &[f64], weights: &[f64]) -> Result<f64> {
        let (a, b) = self.critics.both(inputs)?;
        let n = targets.len() as f64;
        Ok((0..targets.len())
            .map(|k| weights[k] * ((a[k] - targets[k]).powi(2) + (b[k] - targets[k]).powi(2)))
            .sum::<f64>()
            / n)
    }

    /// Critic loss on a batch against freshly sampled targets; used to check training progress.
    pub fn critic_loss_with_noise(&self, batch: &TransitionBatch, weights: &[f64], noise: Matrix) -> Result<f64> {
        batch.validate()?;
        let y = self.targets_for(batch, noise)?;
        self.critic_loss_at(&batch.states.hcat(&batch.actions)?, &y, weights)
    }

    /// One SAC gradient step: critics (weighted by `is_weights`), actor,
    /// optional temperature, then Polyak averaging of the targets.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        is_weights: &[f64],
        rng: &mut R,
    ) -> Result<UpdateStats> {
        batch.validate()?;
        if is_weights.len() != batch.len() {
            return Err(Error::shape(
                "SacAgent::update is_weights",
                batch.len(),
                is_weights.len(),
            ));
        }
        let n = batch.len();
        let inv_n = 1.0 / n as f64;

        let target_noise = self.draw_noise(n, rng);
        let y = self.targets_for(batch, target_noise)?;
        let inputs = batch.states.hcat(&batch.actions)?;
        let c1 = self.critics.q1.forward_cached(&inputs)?;
        let c2 = self.critics.q2.forward_cached(&inputs)?;
        let (q1, q2) = (c1.output().data(), c2.output().data());
        let mut critic_loss = 0.0;
        let mut up1 = Matrix::zeros(n, 1);
        let mut up2 = Matrix::zeros(n, 1);
        let mut td_errors = Vec::with_capacity(n);
        for k in 0..n {
            let (e1, e2) = (q1[k] - y[k], q2[k] - y[k]);
            critic_loss += is_weights[k] * (e1 * e1 + e2 * e2) * inv_n;
            up1.data_mut()[k] = 2.0 * is_weights[k] * e1 * inv_n;
            up2.data_mut()[k] = 2.0 * is_weights[k] * e2 * inv_n;
            td_errors.push(y[k] - q1[k].min(q2[k]));
        }
        let (g1, _) = self.critics.q1.backward(&c1, &up1)?;
        let (g2, _) = self.critics.q2.backward(&c2, &up2)?;
        self.q1_opt.step(self.critics.q1.params_mut(), &g1)?;
        self.q2_opt.step(self.critics.q2.params_mut(), &g2)?;

        let actor_loss = self.actor_step(&batch.states, rng)?;

        for (t, o) in [
            (&mut self.targets.q1, &self.critics.q1),
            (&mut self.targets.q2, &self.critics.q2),
        ] {
            t.soft_update_from(o, self.config.tau)?;
        }

        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            temperature: self.temperature(),
            td_errors,
        })
    }

    fn actor_step<R: Rng + ?Sized>(&mut self, states: &Matrix, rng: &mut R) -> Result<f64> {
        let n = states.rows();
        let d = self.act_dim;
        let inv_n = 1.0 / n as f64;
        let noise = self.draw_noise(n, rng);
        let sample = self.sample_policy(states, noise)?;
        let inputs = states.hcat(&sample.actions)?;
        let c1 = self.critics.q1.forward_cached(&inputs)?;
        let c2 = self.critics.q2.forward_cached(&inputs)?;
        let (q1, q2) = (c1.output().data(), c2.output().data());

        // d(-min Q)/dQ routed to whichever critic is smaller.
        let mut up1 = Matrix::zeros(n, 1);
        let mut up2 = Matrix::zeros(n, 1);
        let temp = self.temperature();
        let mut loss = 0.0;
        for k in 0..n {
            let q = q1[k].min(q2[k]);
            loss += (temp * sample.log_probs[k] - q) * inv_n;
            if q1[k] <= q2[k] {
                up1.data_mut()[k] = -inv_n;
            } else {
                up2.data_mut()[k] = -inv_n;
            }
        }
        let gi1 = self.critics.q1.input_gradient(&c1, &up1)?;
        let gi2 = self.critics.q2.input_gradient(&c2, &up2)?;

        let mut upstream = Matrix::zeros(n, 2 * d);
        for k in 0..n {
            for i in 0..d {
                let col = self.obs_dim + i;
                let dl_da = gi1.get(k, col) + gi2.get(k, col);
                let t = sample.pre_tanh.get(k, i).tanh();
                let dl_du = dl_da * self.action_scale * (1.0 - t * t) + temp * inv_n * 2.0 * t;
                upstream.set(k, i, dl_du);
                if sample.log_std_free[k * d + i] {
                    let dl_dlogstd = dl_du * sample.std.get(k, i) * sample.noise.get(k, i) - temp * inv_n;
                    upstream.set(k, d + i, dl_dlogstd);
                }
            }
        }
        let (grads, _) = self.actor.backward(&sample.cache, &upstream)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;

        if self.config.auto_temperature {
            let mean_entropy_gap = sample.log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() * inv_n;
            let mut log_t = [self.log_temperature];
            self.temperature_opt.step(&mut log_t, &[-mean_entropy_gap])?;
            self.log_temperature = log_t[0];
        }
        Ok(loss)
    }

    /// Frozen copy of the online critics.
    pub fn snapshot_critics(&self) -> CriticPair {
        self.critics.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SacConfig {
        SacConfig {
            hidden: vec![8, 8],
            batch_size: 4,
            ..Default::default()
        }
    }

    fn zero_net(net: &mut Mlp) {
        for p in net.params_mut() {
            *p = 0.0;
        }
    }

    fn set_output_bias(net: &mut Mlp, values: &[f64]) {
        let last = net.num_layers() - 1;
        net.bias_mut(last).copy_from_slice(values);
    }

    fn batch(rewards: Vec<f64>, dones: Vec<bool>) -> TransitionBatch {
        let n = rewards.len();
        TransitionBatch {
            states: Matrix::from_vec(n, 3, (0..3 * n).map(|i| i as f64 * 0.1).collect()).unwrap(),
            actions: Matrix::from_vec(n, 1, (0..n).map(|i| 0.2 * i as f64 - 0.1).collect()).unwrap(),
            rewards,
            next_states: Matrix::from_vec(n, 3, (0..3 * n).map(|i| -(i as f64) * 0.05).collect()).unwrap(),
            dones,
        }
    }

    fn agent(seed: u64) -> SacAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SacAgent::new(3, 1, 2.0, small_config(), &mut rng).unwrap()
    }

    #[test]
    fn deterministic_act_is_repeatable_and_bounded() {
        let a = agent(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.3, -0.4, 1.2];
        let x = a.act(&s, true, &mut rng).unwrap();
        assert_eq!(x, a.act(&s, true, &mut rng).unwrap());
        for _ in 0..100 {
            let y = a.act(&s, false, &mut rng).unwrap();
            assert!(y[0].abs() <= 2.0);
        }
    }

    #[test]
    fn zero_actor_acts_zero() {
        let mut a = agent(2);
        zero_net(a.actor_mut());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(a.act(&[1.0, 2.0, 3.0], true, &mut rng).unwrap(), vec![0.0]);
    }

    #[test]
    fn terminal_td_is_reward_minus_q() {
        let mut a = agent(3);
        zero_net(&mut a.critics_mut().q1);
        zero_net(&mut a.critics_mut().q2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let td = a.compute_td(&batch(vec![0.0], vec![true]), &mut rng).unwrap();
        assert_eq!(td, vec![0.0]);

        set_output_bias(&mut a.critics_mut().q1, &[3.0]);
        set_output_bias(&mut a.critics_mut().q2, &[4.0]);
        let td = a.compute_td(&batch(vec![5.0], vec![true]), &mut rng).unwrap();
        assert_eq!(td, vec![2.0]);
    }

    #[test]
    fn td_matches_hand_evaluation() {
        let mut a = agent(4);
        // Constant networks: every output equals the final bias.
        zero_net(a.actor_mut());
        set_output_bias(a.actor_mut(), &[0.3, -1.0]);
        let critics = a.critics_mut();
        zero_net(&mut critics.q1);
        zero_net(&mut critics.q2);
        set_output_bias(&mut a.critics_mut().q1, &[1.5]);
        set_output_bias(&mut a.critics_mut().q2, &[1.2]);
        zero_net(&mut a.targets_mut().q1);
        zero_net(&mut a.targets_mut().q2);
        set_output_bias(&mut a.targets_mut().q1, &[2.0]);
        set_output_bias(&mut a.targets_mut().q2, &[2.5]);

        let noise = Matrix::from_rows(&[[0.5], [-1.0]]).unwrap();
        let b = batch(vec![1.0, -0.5], vec![false, false]);
        let td = a.compute_td_with_noise(&b, noise).unwrap();

        let gamma = 0.99;
        let temp: f64 = 0.2;
        let expected: Vec<f64> = [(1.0, 0.5), (-0.5, -1.0)]
            .iter()
            .map(|&(r, eps): &(f64, f64)| {
                let sigma = (-1.0f64).exp();
                let u = 0.3 + sigma * eps;
                let normal = -0.5 * eps * eps - (-1.0) - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let jac = (2.0 * (1.0 - u.tanh().powi(2))).ln();
                let logp = normal - jac;
                r + gamma * (2.0 - temp * logp) - 1.2
            })
            .collect();
        for (x, y) in td.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn compute_td_leaves_parameters_alone() {
        let a = agent(5);
        let before = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        a.compute_td(&batch(vec![1.0, 2.0], vec![false, true]), &mut rng)
            .unwrap();
        assert_eq!(a.critics(), before.critics());
        assert_eq!(a.actor(), before.actor());
    }

    #[test]
    fn zero_weights_freeze_critics() {
        let mut a = agent(6);
        let before = a.critics().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        a.update(&batch(vec![1.0, 2.0, 3.0], vec![false; 3]), &[0.0; 3], &mut rng)
            .unwrap();
        assert_eq!(a.critics(), &before);
    }

    #[test]
    fn critic_loss_is_linear_in_weights() {
        let a = agent(7);
        let b = batch(vec![1.0, -2.0, 0.5], vec![false, true, false]);
        let noise = || Matrix::from_rows(&[[0.1], [0.2], [-0.3]]).unwrap();
        let l1 = a.critic_loss_with_noise(&b, &[1.0; 3], noise()).unwrap();
        let l2 = a.critic_loss_with_noise(&b, &[2.0; 3], noise()).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs().max(1.0));
    }

    #[test]
    fn unit_weights_reproduce_unweighted_loss() {
        let mut a = agent(8);
        let b = batch(vec![1.0, -2.0], vec![false, false]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut probe = rng.clone();
        let noise = a.draw_noise(2, &mut probe);
        let y = a.targets_for(&b, noise).unwrap();
        let inputs = b.states.hcat(&b.actions).unwrap();
        let (q1, q2) = a.critics.both(&inputs).unwrap();
        let plain: f64 = (0..2)
            .map(|k| (q1[k] - y[k]).powi(2) + (q2[k] - y[k]).powi(2))
            .sum::<f64>()
            / 2.0;
        let stats = a.update(&b, &[1.0, 1.0], &mut rng).unwrap();
        assert_eq!(stats.critic_loss, plain);
    }

    #[test]
    fn zero_critics_give_zero_q() {
        let mut a = agent(9);
        zero_net(&mut a.critics_mut().q1);
        zero_net(&mut a.critics_mut().q2);
        assert_eq!(a.q_value(&[1.0, 2.0, 3.0], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn targets_start_equal_to_online() {
        let a = agent(10);
        assert_eq!(a.targets(), a.critics());
    }
}
