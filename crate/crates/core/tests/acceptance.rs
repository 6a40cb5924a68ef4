//! Acceptance criteria A1-A8. Runs as a plain binary (`harness = false`) so
//! that every criterion prints one PASS/FAIL line.
//!
//! A1-A4 and A8 decide the exit code. A5-A7 are directional training
//! experiments: their verdict is printed and their artifacts are written to
//! `<target tmp>/acceptance/`, but they do not fail the build.
//!
//! Set `DEER_ACCEPTANCE_FAST=1` to skip A5-A7.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use deer_core::detector::{classifier_loss, js_score};
use deer_core::harness::{
    detect_bench, emit_plots, run_experiment, run_metrics, summarize, summary_csv, summary_text, BenchConfig,
    ExperimentConfig, RunLog,
};
use deer_core::nn::{Activation, Matrix, Mlp};
use deer_core::replay::{
    importance_weights, priority_post_change, priority_pre_change, sampling_probabilities, ReplayBuffer, ReplayConfig,
    ReplayPolicy, Transition,
};
use deer_core::stats::{chi_square_gof, mean, welch_t_test};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

struct Tally {
    cases: usize,
    worst: f64,
}

impl Tally {
    fn check(&mut self, got: f64, want: f64) {
        self.cases += 1;
        self.worst = self.worst.max(rel_err(got, want));
    }
}

fn a1_equations() -> Outcome {
    let mut t = Tally { cases: 0, worst: 0.0 };
    let eps = 1e-3;

    // Pre-change priority 2 sigma(-|doe|).
    for doe in [0.0, 1.0, -1.0, 0.37, 4.2, -12.5] {
        t.check(priority_pre_change(doe, eps), (2.0 / (1.0 + doe.abs().exp())).max(eps));
    }
    t.check(priority_pre_change(1.0, eps), 0.537_882_842_739_990_1);
    // Deep saturation hits the floor.
    t.check(priority_pre_change(40.0, eps), eps);

    // Post-change priority mixes the TD and discrepancy terms by the score.
    let post = |td: f64, doe: f64, s: f64| {
        let a = (1.0 - (-td.abs()).exp()) / (1.0 + (-td.abs()).exp());
        let b = (1.0 - (-doe.abs()).exp()) / (1.0 + (-doe.abs()).exp());
        ((1.0 - s) * a + s * b).max(eps)
    };
    for (td, doe, s) in [
        (1.0, 2.0, 0.5),
        (-0.3, 0.0, 0.0),
        (2.5, -1.5, 1.0),
        (0.05, 0.7, 0.25),
        (-4.0, 3.0, 0.9),
        (0.0, 0.0, 0.4),
    ] {
        t.check(priority_post_change(td, doe, s, eps), post(td, doe, s));
    }
    t.check(priority_post_change(1.0, 2.0, 0.5, eps), 0.611_855_656_607_887_2);

    // Density-ratio score.
    let js = |te: &[f64], rf: &[f64]| {
        let a: f64 = te.iter().map(|f| f.ln()).sum::<f64>() / te.len() as f64;
        let b: f64 = rf.iter().map(|f| (1.0 - f).ln()).sum::<f64>() / rf.len() as f64;
        std::f64::consts::LN_2 + 0.5 * a + 0.5 * b
    };
    let js_cases: [(&[f64], &[f64]); 5] = [
        (&[0.8, 0.6], &[0.3, 0.1]),
        (&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]),
        (&[0.99, 0.97, 0.95, 0.999], &[0.01, 0.02, 0.04, 0.001]),
        (&[0.2, 0.3], &[0.7, 0.6]),
        (&[0.9], &[0.45, 0.2, 0.6]),
    ];
    for (te, rf) in js_cases {
        t.check(js_score(te, rf), js(te, rf));
    }
    let hand =
        std::f64::consts::LN_2 + 0.5 * (0.8f64.ln() + 0.6f64.ln()) / 2.0 + 0.5 * (0.7f64.ln() + 0.9f64.ln()) / 2.0;
    t.check(js_score(&[0.8, 0.6], &[0.3, 0.1]), hand);

    // Classifier loss: -mean log(1 - f_ref) - mean log f_test.
    for (te, rf) in js_cases {
        let want = -rf.iter().map(|f| (1.0 - f).ln()).sum::<f64>() / rf.len() as f64
            - te.iter().map(|f| f.ln()).sum::<f64>() / te.len() as f64;
        t.check(classifier_loss(rf, te), want);
    }
    t.check(classifier_loss(&[0.5], &[0.5]), 2.0 * std::f64::consts::LN_2);

    // Sampling probabilities p^a / sum p^a.
    let prob_cases: [(&[f64], f64); 6] = [
        (&[3.0, 1.0], 1.0),
        (&[1.0, 1.0, 1.0, 1.0], 0.6),
        (&[0.5, 2.0, 0.001], 0.6),
        (&[10.0, 0.1, 3.3, 7.0, 1e-3], 0.4),
        (&[0.2, 0.9], 0.0001),
        (&[1.0, 4.0, 9.0], 0.5),
    ];
    for (p, a) in prob_cases {
        let total: f64 = p.iter().map(|x| x.powf(a)).sum();
        for (got, x) in sampling_probabilities(p, a).iter().zip(p) {
            t.check(*got, x.powf(a) / total);
        }
    }
    t.check(sampling_probabilities(&[3.0, 1.0], 1.0)[0], 0.75);
    t.check(sampling_probabilities(&[1.0, 4.0, 9.0], 0.5)[2], 0.5);

    // Importance weights (N P)^-b over their maximum.
    let w_cases: [(&[f64], usize, f64); 5] = [
        (&[0.75, 0.25], 2, 1.0),
        (&[0.1, 0.2, 0.3, 0.4], 4, 0.4),
        (&[0.5, 0.5], 100, 0.7),
        (&[0.01, 0.5, 0.49], 3, 0.4),
        (&[0.25, 0.25, 0.25, 0.25], 4, 1.0),
    ];
    for (p, n, b) in w_cases {
        let raw: Vec<f64> = p.iter().map(|x| 1.0 / (n as f64 * x).powf(b)).collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        for (got, r) in importance_weights(p, n, b).iter().zip(&raw) {
            t.check(*got, r / max);
        }
    }
    t.check(importance_weights(&[0.75, 0.25], 2, 1.0)[0], 1.0 / 3.0);

    Outcome {
        pass: t.worst <= 1e-9,
        detail: format!("{} cases, worst relative error {:.2e} (tol 1e-9)", t.cases, t.worst),
    }
}

fn transition(k: usize) -> Transition {
    Transition {
        state: vec![k as f64],
        action: vec![0.0],
        reward: 0.0,
        next_state: vec![k as f64],
        done: false,
        insert_step: k as u64,
        epoch: 0,
    }
}

fn a2_sampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphas = [0.4, 0.6, 1.0];
    let (mut chi_pass, mut band_pass) = (0, 0);
    let mut worst_z: f64 = 0.0;
    for v in 0..50 {
        let n = rng.gen_range(2..=64usize);
        let alpha = alphas[v % 3];
        let priorities: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0f64..2.0).exp()).collect();
        let mut buf = ReplayBuffer::new(ReplayConfig {
            capacity: n,
            alpha,
            policy: ReplayPolicy::Per,
            ..Default::default()
        })
        .unwrap();
        for (k, &p) in priorities.iter().enumerate() {
            buf.insert(transition(k));
            buf.set_priority(k, p);
        }
        let total: f64 = priorities.iter().map(|p| p.powf(alpha)).sum();
        let expected: Vec<f64> = priorities.iter().map(|p| p.powf(alpha) / total).collect();
        let batches = 100_000 / n;
        let draws = (batches * n) as f64;
        let mut counts = vec![0u64; n];
        for _ in 0..batches {
            for &k in &buf.sample(n, &mut rng).unwrap().indices {
                counts[k] += 1;
            }
        }
        let ok_band = counts.iter().zip(&expected).all(|(&c, &p)| {
            let sd = (draws * p * (1.0 - p)).sqrt();
            let z = (c as f64 - draws * p).abs() / sd;
            worst_z = worst_z.max(z);
            z <= 3.0
        });
        band_pass += ok_band as usize;
        let (_, p_value) = chi_square_gof(&counts, &expected);
        chi_pass += (p_value > 0.01) as usize;
    }
    Outcome {
        pass: band_pass == 50 && chi_pass >= 48,
        detail: format!(
            "3-sigma band held for {band_pass}/50 vectors (worst |z| {worst_z:.2}), chi-square p > 0.01 for {chi_pass}/50"
        ),
    }
}

fn a3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let acts = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Identity,
    ];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..20 {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..=5));
        }
        sizes.push(rng.gen_range(1..=3));
        let hidden = acts[i % 4];
        let output = acts[(i / 4 + i) % 4];
        let mut net = Mlp::new(&sizes, hidden, output, &mut rng).unwrap();
        let batch = rng.gen_range(1..=4);
        let x = Matrix::from_vec(
            batch,
            sizes[0],
            (0..batch * sizes[0]).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let out_dim = *sizes.last().unwrap();
        let c = Matrix::from_vec(
            batch,
            out_dim,
            (0..batch * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let loss = |net: &Mlp| -> f64 {
            let y = net.forward(&x).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let cache = net.forward_cached(&x).unwrap();
        let (grads, _) = net.backward(&cache, &c).unwrap();
        for (k, &g) in grads.iter().enumerate() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let up = loss(&net);
            net.params_mut()[k] = orig - h;
            let down = loss(&net);
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = g.abs().max(fd.abs()).max(1e-3);
            worst = worst.max((g - fd).abs() / scale);
            checked += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!("{checked} parameters over 20 nets, worst relative error {worst:.2e} (tol 1e-4)"),
    }
}

fn a4_detector() -> Outcome {
    let report = detect_bench(&BenchConfig::default()).unwrap();
    let (quiet, found) = (report.quiet_streams(), report.detected_streams());
    Outcome {
        pass: quiet >= 19 && found >= 19,
        detail: format!("stationary streams without events {quiet}/20, 5-sigma shifts found in time {found}/20"),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn artifacts_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn a8_reproducible() -> Outcome {
    let dir = artifacts_dir("a8");
    let mut cfg = ExperimentConfig::load(workspace_root().join("configs/desk.toml")).unwrap();
    cfg.steps = 3_000;
    cfg.change_steps = vec![1_500];
    cfg.agent_warmup = 500;
    cfg.detector_window = 200;
    cfg.detector_sample_len = 20;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).unwrap();
    let mut files = Vec::new();
    for policy in ["uniform", "per", "deer"] {
        let mut pair = Vec::new();
        for rep in 0..2 {
            let out = dir.join(format!("{policy}_{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_deer"))
                .args(["run", "--config"])
                .arg(&cfg_path)
                .args(["--seed", "3", "--policy", policy, "--out"])
                .arg(&out)
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            let name = format!("pendulum_{policy}_off1_seed3.csv");
            pair.push(std::fs::read(out.join(name)).unwrap());
        }
        files.push((policy, pair[0] == pair[1] && !pair[0].is_empty()));
    }
    let same = files.iter().filter(|f| f.1).count();
    Outcome {
        pass: same == files.len(),
        detail: format!(
            "byte-identical CSV on repeated `deer run` for {same}/{} policies",
            files.len()
        ),
    }
}

struct A5Result {
    outcome: Outcome,
    deer_logs: Vec<RunLog>,
}

fn a5_ordering() -> A5Result {
    let dir = artifacts_dir("a5");
    let base = ExperimentConfig::load(workspace_root().join("configs/desk.toml")).unwrap();
    let start = Instant::now();
    let mut logs = Vec::new();
    for policy in [ReplayPolicy::Uniform, ReplayPolicy::Per, ReplayPolicy::Deer] {
        let cfg = ExperimentConfig { policy, ..base.clone() };
        for &seed in &cfg.seeds {
            let log = run_experiment(&cfg, seed).unwrap();
            log.save(dir.join(log.file_name())).unwrap();
            logs.push(log);
        }
    }
    let elapsed = start.elapsed();
    let rows = summarize(&logs);
    std::fs::write(dir.join("summary.csv"), summary_csv(&rows)).unwrap();
    std::fs::write(dir.join("summary.txt"), summary_text(&rows)).unwrap();
    emit_plots(&logs, &dir).unwrap();
    let get = |p| rows.iter().find(|r| r.policy == p).unwrap();
    let (u, per, deer) = (
        get(ReplayPolicy::Uniform),
        get(ReplayPolicy::Per),
        get(ReplayPolicy::Deer),
    );
    let ordering = deer.post_change_mean >= per.post_change_mean && deer.post_change_mean >= u.post_change_mean;
    let recovery = deer.recovery_mean <= per.recovery_mean;
    let in_time = elapsed < Duration::from_secs(30 * 60);
    let detail = format!(
        "post-change return uniform {:.1} per {:.1} deer {:.1}; recovery steps per {:.0} deer {:.0}; {:.0} s; artifacts in {}\n{}",
        u.post_change_mean,
        per.post_change_mean,
        deer.post_change_mean,
        per.recovery_mean,
        deer.recovery_mean,
        elapsed.as_secs_f64(),
        dir.display(),
        summary_text(&rows).trim_end()
    );
    A5Result {
        outcome: Outcome {
            pass: ordering && recovery && in_time,
            detail,
        },
        deer_logs: logs
            .into_iter()
            .filter(|l| l.meta.policy == ReplayPolicy::Deer)
            .collect(),
    }
}

fn a6_priorities(deer_logs: &[RunLog]) -> Outcome {
    let (mut early, mut decays) = (0, 0);
    let mut notes = Vec::new();
    for log in deer_logs {
        let change = log.meta.change_steps[0];
        let Some(event) = log.event_steps().into_iter().find(|&s| s >= change) else {
            notes.push(format!("seed {}: no detection", log.meta.seed));
            continue;
        };
        let after: Vec<_> = log.rows.iter().filter(|r| r.step > event).collect();
        let first: Vec<_> = after.iter().filter(|r| r.step <= event + 2_000).collect();
        let post = mean(&first.iter().map(|r| r.post_mean).collect::<Vec<_>>());
        let pre = mean(&first.iter().map(|r| r.pre_mean).collect::<Vec<_>>());
        let gaps: Vec<f64> = after.iter().map(|r| r.post_mean - r.pre_mean).collect();
        let peak = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let end = *gaps.last().unwrap();
        early += (post > pre) as usize;
        decays += (end < peak) as usize;
        notes.push(format!(
            "seed {}: event {event}, post {post:.3} vs pre {pre:.3}, gap peak {peak:.3} end {end:.3}",
            log.meta.seed
        ));
    }
    Outcome {
        pass: early >= 4 && decays >= 4,
        detail: format!(
            "post > pre early in {early}/5 seeds, gap shrinks from peak in {decays}/5\n    {}",
            notes.join("\n    ")
        ),
    }
}

fn a7_stationary() -> Outcome {
    let dir = artifacts_dir("a7");
    let base = ExperimentConfig::load(workspace_root().join("configs/stationary.toml")).unwrap();
    let mut finals = Vec::new();
    let mut logs = Vec::new();
    for policy in [ReplayPolicy::Per, ReplayPolicy::Deer] {
        let cfg = ExperimentConfig { policy, ..base.clone() };
        let mut v = Vec::new();
        for &seed in &cfg.seeds {
            let log = run_experiment(&cfg, seed).unwrap();
            log.save(dir.join(log.file_name())).unwrap();
            v.push(run_metrics(&log).final_return);
            logs.push(log);
        }
        finals.push(v);
    }
    emit_plots(&logs, &dir).unwrap();
    let w = welch_t_test(&finals[1], &finals[0]);
    Outcome {
        pass: w.p_value > 0.05,
        detail: format!(
            "final-window return per {:.1} deer {:.1}, Welch t {:.3}, p {:.3}",
            mean(&finals[0]),
            mean(&finals[1]),
            w.t,
            w.p_value
        ),
    }
}

fn report(id: &str, name: &str, gating: bool, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    println!(
        "{id} {} {name}: {} [{:.1} s{}]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64(),
        if gating { "" } else { ", non-gating" }
    );
    o.pass || !gating
}

fn main() -> ExitCode {
    // libtest passes flags such as --nocapture or a filter; none apply here.
    let mut ok = true;
    ok &= report("A1", "equation suite", true, a1_equations);
    ok &= report("A2", "sum-tree sampling fidelity", true, a2_sampling);
    ok &= report("A3", "gradient correctness", true, a3_gradients);
    ok &= report("A4", "detector operating characteristics", true, a4_detector);
    ok &= report("A8", "end-to-end reproducibility", true, a8_reproducible);
    if std::env::var_os("DEER_ACCEPTANCE_FAST").is_some() {
        println!("A5 SKIP desk-scale ordering (DEER_ACCEPTANCE_FAST set)");
        println!("A6 SKIP priority dynamics (DEER_ACCEPTANCE_FAST set)");
        println!("A7 SKIP stationary no-harm (DEER_ACCEPTANCE_FAST set)");
    } else {
        let mut deer_logs = Vec::new();
        report("A5", "desk-scale sample-efficiency ordering", false, || {
            let r = a5_ordering();
            deer_logs = r.deer_logs;
            r.outcome
        });
        report("A6", "priority-distribution dynamics", false, || {
            a6_priorities(&deer_logs)
        });
        report("A7", "stationary no-harm", false, a7_stationary);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
