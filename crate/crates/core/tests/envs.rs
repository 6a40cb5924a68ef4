use deer_core::envs::{EnvSchedule, Environment, PendulumEnv, PendulumParams, PointMassEnv, PointMassParams};
use deer_core::stats::chi_square_gof;
use std::f64::consts::PI;

#[test]
fn pendulum_reset_angle_is_uniform() {
    let mut env = PendulumEnv::new(PendulumParams::default(), EnvSchedule::stationary()).unwrap();
    let bins = 20;
    let mut counts = vec![0u64; bins];
    for seed in 0..10_000 {
        let obs = env.reset(seed);
        let theta = obs[1].atan2(obs[0]);
        assert!(theta > -PI && theta <= PI);
        let k = (((theta + PI) / (2.0 * PI)) * bins as f64) as usize;
        counts[k.min(bins - 1)] += 1;
        assert!(obs[2].abs() <= 1.0);
    }
    let (_, p) = chi_square_gof(&counts, &vec![1.0 / bins as f64; bins]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn point_mass_reset_is_uniform_on_the_track() {
    let mut env = PointMassEnv::new(PointMassParams::default(), EnvSchedule::stationary()).unwrap();
    let bins = 10;
    let mut counts = vec![0u64; bins];
    for seed in 0..10_000 {
        env.reset(seed);
        let x = env.position();
        assert!((-1.0..=1.0).contains(&x));
        counts[(((x + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let (_, p) = chi_square_gof(&counts, &vec![1.0 / bins as f64; bins]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn same_seed_and_actions_give_same_trajectory() {
    let run = || {
        let mut env = PendulumEnv::new(PendulumParams::default(), EnvSchedule::stationary()).unwrap();
        let mut obs = env.reset(42);
        let mut out = Vec::new();
        for t in 0..300 {
            let r = env.step(&[((t as f64) * 0.1).sin() * 2.0]);
            out.push((r.reward, r.truncated));
            obs = if r.truncated { env.reset(43) } else { r.next_state };
        }
        (out, obs)
    };
    assert_eq!(run(), run());
}
