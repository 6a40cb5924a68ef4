use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::runlog::{LogRow, RunLog, RunMeta};
use crate::detector::{normalized_score, ChangeDetector};
use crate::doe::DoeTracker;
use crate::error::Result;
use crate::replay::{ReplayBuffer, ReplayPolicy, Transition};
use crate::sac::{SacAgent, TransitionBatch};

/// Substream ids of the per-run ChaCha8 generator. Every stream is seeded with
/// the run seed and differs only in its stream number.
pub mod streams {
    /// Episode reset seeds.
    pub const ENV: u64 = 1;
    /// Network initialisation, policy sampling and SAC update noise.
    pub const AGENT: u64 = 2;
    /// Minibatch sampling.
    pub const BUFFER: u64 = 3;
    /// Seed of the change detector.
    pub const DETECTOR: u64 = 4;
    /// Uniform actions during warmup.
    pub const EXPLORE: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Default)]
struct Interval {
    returns_sum: f64,
    returns_n: usize,
    loss_sum: f64,
    loss_n: usize,
    event: bool,
}

/// Trains one agent for `config.steps` environment steps.
///
/// Per step: act, step the environment, feed the reward to the detector,
/// handle a detection (snapshot the critics, open a new buffer epoch), store
/// the transition, then sample a batch, update the agent and refresh the
/// batch's priorities from the fresh TD errors and discrepancies.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    config.validate()?;
    let agent_cfg = config.agent_config();
    let mut env = config.build_env()?;
    let mut env_rng = stream_rng(seed, streams::ENV);
    let mut agent_rng = stream_rng(seed, streams::AGENT);
    let mut buffer_rng = stream_rng(seed, streams::BUFFER);
    let mut explore_rng = stream_rng(seed, streams::EXPLORE);
    let detector_seed = stream_rng(seed, streams::DETECTOR).gen::<u64>();

    let mut agent = SacAgent::new(
        env.obs_dim(),
        env.act_dim(),
        env.action_scale(),
        agent_cfg.clone(),
        &mut agent_rng,
    )?;
    let mut buffer = ReplayBuffer::new(config.replay_config())?;
    let mut detector = ChangeDetector::new(config.detector_config(), detector_seed)?;
    let mut doe = DoeTracker::new();
    let policy = config.policy;
    let refresh_on_sample = config.replay_refresh_on_sample;

    let mut state = env.reset(env_rng.gen());
    let mut episode_return = 0.0;
    let mut last_return = 0.0;
    let mut score = 0.0;
    let mut interval = Interval::default();
    let mut rows = Vec::with_capacity((config.steps / config.log_interval) as usize);
    let scale = env.action_scale();

    for t in 1..=config.steps {
        let action = if t <= agent_cfg.warmup_steps {
            (0..env.act_dim())
                .map(|_| explore_rng.gen_range(-scale..=scale))
                .collect()
        } else {
            agent.act(&state, false, &mut agent_rng)?
        };
        let step = env.step(&action);
        episode_return += step.reward;

        if let Some(eval) = detector.observe(t, step.reward)? {
            score = eval.score;
            if let Some(event) = eval.event {
                doe.capture(&agent, &event);
                buffer.on_change_event(&event);
                interval.event = true;
            }
        }

        let transition = Transition {
            state: state.clone(),
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
            insert_step: t,
            epoch: 0,
        };
        let inserted = buffer.insert(transition);
        if !refresh_on_sample && policy != ReplayPolicy::Uniform && t > agent_cfg.warmup_steps {
            let batch = buffer.gather(&[inserted])?;
            let td = agent.compute_td(&batch, &mut agent_rng)?;
            let d = batch_doe(&doe, &agent, &batch, policy)?;
            buffer.refresh_priorities(&[inserted], &td, &d, normalized_score(score))?;
        }

        if t > agent_cfg.warmup_steps && buffer.len() >= agent_cfg.batch_size {
            let sampled = buffer.sample(agent_cfg.batch_size, &mut buffer_rng)?;
            let stats = agent.update(&sampled.batch, &sampled.weights, &mut agent_rng)?;
            interval.loss_sum += stats.critic_loss;
            interval.loss_n += 1;
            if refresh_on_sample && policy != ReplayPolicy::Uniform {
                let d = batch_doe(&doe, &agent, &sampled.batch, policy)?;
                buffer.refresh_priorities(&sampled.indices, &stats.td_errors, &d, normalized_score(score))?;
            }
        }

        if step.done || step.truncated {
            interval.returns_sum += episode_return;
            interval.returns_n += 1;
            episode_return = 0.0;
            state = env.reset(env_rng.gen());
        } else {
            state = step.next_state;
        }

        if t % config.log_interval == 0 {
            if interval.returns_n > 0 {
                last_return = interval.returns_sum / interval.returns_n as f64;
            }
            let stats = buffer.stats();
            rows.push(LogRow {
                step: t,
                episode_return: last_return,
                score,
                event: interval.event as u8,
                epoch: stats.current_epoch,
                pre_count: stats.pre_change.count,
                pre_mean: stats.pre_change.mean,
                pre_median: stats.pre_change.median,
                post_count: stats.post_change.count,
                post_mean: stats.post_change.mean,
                post_median: stats.post_change.median,
                critic_loss: if interval.loss_n > 0 {
                    interval.loss_sum / interval.loss_n as f64
                } else {
                    0.0
                },
                occupancy: stats.occupancy,
                snapshot: doe.has_snapshot() as u8,
            });
            interval = Interval::default();
        }
    }

    Ok(RunLog {
        meta: RunMeta {
            env: config.env.name().to_string(),
            policy,
            seed,
            offset: config.offset,
            change_steps: config.change_steps.clone(),
            steps: config.steps,
        },
        rows,
    })
}

/// Discrepancies for a batch; only the change-aware policy reads them.
fn batch_doe(doe: &DoeTracker, agent: &SacAgent, batch: &TransitionBatch, policy: ReplayPolicy) -> Result<Vec<f64>> {
    if policy == ReplayPolicy::Deer {
        doe.doe_batch_or_zero(agent, &batch.states, &batch.actions)
    } else {
        Ok(vec![0.0; batch.len()])
    }
}

/// Runs every seed of the config, in parallel, in seed order.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<RunLog>> {
    use rayon::prelude::*;
    config.validate()?;
    config.seeds.par_iter().map(|&s| run_experiment(config, s)).collect()
}
