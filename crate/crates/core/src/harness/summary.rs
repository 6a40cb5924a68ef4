use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::runlog::RunLog;
use crate::replay::ReplayPolicy;
use crate::stats::{mean, sample_std};

/// Steps before the change averaged as the reference return for recovery.
pub const PRE_CHANGE_WINDOW: u64 = 5_000;
/// Trailing window for the final-return column.
pub const FINAL_WINDOW: u64 = 10_000;

/// Per-run figures that feed the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub policy: ReplayPolicy,
    pub offset: f64,
    pub seed: u64,
    /// Mean logged return after the first change (whole run if none).
    pub post_change_return: f64,
    /// Mean logged return over the last [`FINAL_WINDOW`] steps.
    pub final_return: f64,
    /// Steps from the first change until the logged return is within 10% of
    /// the pre-change mean; the remaining run length if never.
    pub recovery_steps: Option<u64>,
    pub recovered: bool,
}

fn mean_where(log: &RunLog, keep: impl Fn(u64) -> bool) -> f64 {
    let v: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| keep(r.step))
        .map(|r| r.episode_return)
        .collect();
    if v.is_empty() {
        f64::NAN
    } else {
        mean(&v)
    }
}

/// Level a return has to reach again: 10% of the reference's magnitude
/// below it, so it works for negative returns too.
pub fn recovery_threshold(pre_change_mean: f64) -> f64 {
    pre_change_mean - 0.1 * pre_change_mean.abs()
}

pub fn run_metrics(log: &RunLog) -> RunMetrics {
    let end = log.rows.last().map_or(0, |r| r.step);
    let change = log.meta.change_steps.first().copied();
    let post_change_return = match change {
        Some(c) => mean_where(log, |s| s > c),
        None => mean_where(log, |_| true),
    };
    let final_return = mean_where(log, |s| s + FINAL_WINDOW > end);
    let (recovery_steps, recovered) = match change {
        None => (None, false),
        Some(c) => {
            let pre = mean_where(log, |s| s <= c && s + PRE_CHANGE_WINDOW > c);
            let target = recovery_threshold(pre);
            match log.rows.iter().find(|r| r.step > c && r.episode_return >= target) {
                Some(r) => (Some(r.step - c), true),
                None => (Some(end.saturating_sub(c)), false),
            }
        }
    };
    RunMetrics {
        policy: log.meta.policy,
        offset: log.meta.offset,
        seed: log.meta.seed,
        post_change_return,
        final_return,
        recovery_steps,
        recovered,
    }
}

/// One row of the summary table: mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: ReplayPolicy,
    pub offset: f64,
    pub runs: usize,
    pub post_change_mean: f64,
    pub post_change_std: f64,
    pub final_mean: f64,
    pub final_std: f64,
    /// `NaN` for stationary runs.
    pub recovery_mean: f64,
    pub recovery_std: f64,
    pub recovered: usize,
}

/// Groups logs by (policy, offset); rows come out sorted by offset, then policy.
pub fn summarize(logs: &[RunLog]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, ReplayPolicy), Vec<RunMetrics>> = BTreeMap::new();
    for log in logs {
        let m = run_metrics(log);
        groups.entry((m.offset.to_bits(), m.policy)).or_default().push(m);
    }
    groups
        .into_values()
        .map(|mut ms| {
            // Sum order must not depend on the input order.
            ms.sort_by_key(|m| m.seed);
            let post: Vec<f64> = ms.iter().map(|m| m.post_change_return).collect();
            let fin: Vec<f64> = ms.iter().map(|m| m.final_return).collect();
            let rec: Vec<f64> = ms.iter().filter_map(|m| m.recovery_steps.map(|s| s as f64)).collect();
            let (recovery_mean, recovery_std) = if rec.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (mean(&rec), sample_std(&rec))
            };
            SummaryRow {
                policy: ms[0].policy,
                offset: ms[0].offset,
                runs: ms.len(),
                post_change_mean: mean(&post),
                post_change_std: sample_std(&post),
                final_mean: mean(&fin),
                final_std: sample_std(&fin),
                recovery_mean,
                recovery_std,
                recovered: ms.iter().filter(|m| m.recovered).count(),
            }
        })
        .collect()
}

const COLUMNS: [&str; 10] = [
    "policy",
    "offset",
    "runs",
    "post_change_mean",
    "post_change_std",
    "final_mean",
    "final_std",
    "recovery_mean",
    "recovery_std",
    "recovered",
];

fn cells(r: &SummaryRow) -> [String; 10] {
    [
        r.policy.to_string(),
        format!("{}", r.offset),
        r.runs.to_string(),
        format!("{:.3}", r.post_change_mean),
        format!("{:.3}", r.post_change_std),
        format!("{:.3}", r.final_mean),
        format!("{:.3}", r.final_std),
        format!("{:.1}", r.recovery_mean),
        format!("{:.1}", r.recovery_std),
        r.recovered.to_string(),
    ]
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&cells(r).join(","));
        out.push('\n');
    }
    out
}

/// Right-aligned plain-text table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let body: Vec<[String; 10]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cols: &[&str]| {
        let parts: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, &COLUMNS);
    for r in &body {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::runlog::synthetic_log;
    use super::*;

    #[test]
    fn single_log_has_zero_std() {
        let s = summarize(&[synthetic_log(ReplayPolicy::Deer, 0, &[1.0, 2.0, 3.0, 4.0])]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].post_change_std, 0.0);
        assert_eq!(s[0].post_change_mean, 3.5);
    }

    #[test]
    fn two_logs_use_sample_std() {
        let a = synthetic_log(ReplayPolicy::Per, 0, &[0.0, 0.0, 10.0, 10.0]);
        let b = synthetic_log(ReplayPolicy::Per, 1, &[0.0, 0.0, 20.0, 20.0]);
        let s = summarize(&[a, b]);
        assert_eq!(s[0].post_change_mean, 15.0);
        assert!((s[0].post_change_std - 50f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter() {
        let logs: Vec<_> = (0..5)
            .map(|i| {
                let p = [ReplayPolicy::Deer, ReplayPolicy::Per][i % 2];
                synthetic_log(p, i as u64, &[0.1 * i as f64, 0.3, 0.7 + i as f64, -0.2])
            })
            .collect();
        let mut rev = logs.clone();
        rev.reverse();
        rev.swap(0, 2);
        assert_eq!(summary_csv(&summarize(&logs)), summary_csv(&summarize(&rev)));
    }

    #[test]
    fn recovery_against_negative_reference() {
        // Change after step 200; the pre-change reference is -100.
        let log = synthetic_log(ReplayPolicy::Deer, 0, &[-100.0, -100.0, -300.0, -111.0, -109.0]);
        let mut log = log;
        log.meta.change_steps = vec![200];
        assert_eq!(recovery_threshold(-100.0), -110.0);
        let m = run_metrics(&log);
        assert_eq!(m.recovery_steps, Some(300));
        assert!(m.recovered);
    }

    #[test]
    fn recovery_is_censored() {
        let mut log = synthetic_log(ReplayPolicy::Per, 0, &[-100.0, -100.0, -300.0, -300.0]);
        log.meta.change_steps = vec![200];
        let m = run_metrics(&log);
        assert_eq!(m.recovery_steps, Some(200));
        assert!(!m.recovered);
    }

    #[test]
    fn text_table_is_aligned() {
        let s = summarize(&[synthetic_log(ReplayPolicy::Uniform, 0, &[1.0, 2.0])]);
        let text = summary_text(&s);
        let lens: Vec<usize> = text.lines().map(str::len).collect();
        assert_eq!(lens.len(), 2);
        assert_eq!(lens[0], lens[1]);
    }
}
