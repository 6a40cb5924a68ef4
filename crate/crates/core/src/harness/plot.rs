use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::runlog::{LogRow, RunLog};
use crate::error::{Error, Result};
use crate::replay::ReplayPolicy;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Static SVG line chart with optional dashed vertical markers.
#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// x positions of dashed vertical lines.
    pub markers: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl LineChart {
    fn x_range(&self) -> (f64, f64) {
        span(
            self.series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0))
                .chain(self.markers.iter().copied()),
        )
    }

    fn y_range(&self) -> (f64, f64) {
        span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)))
    }

    /// Horizontal pixel position of data coordinate `x`.
    pub fn x_to_px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range();
        LEFT + (x - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)
    }

    fn y_to_px(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range();
        HEIGHT - BOTTOM - (y - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        let (px0, px1) = (LEFT, WIDTH - RIGHT);
        let (py0, py1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (px0 + px1) / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<path class="axes" d="M{px0},{py1} L{px0},{py0} L{px1},{py0}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let (xp, yp) = (self.x_to_px(xv), self.y_to_px(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{xp:.2}" y1="{py0}" x2="{xp:.2}" y2="{}" stroke="black"/><text x="{xp:.2}" y="{}" text-anchor="middle">{}</text>"#,
                py0 + 5.0,
                py0 + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{px0}" y1="{yp:.2}" x2="{px1}" y2="{yp:.2}" stroke="#e5e5e5"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                px0 - 6.0,
                yp + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (px0 + px1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (py0 + py1) / 2.0,
            escape(&self.y_label)
        );
        for &m in &self.markers {
            let xp = self.x_to_px(m);
            let _ = writeln!(
                s,
                r##"<line class="change" data-step="{m}" x1="{xp:.2}" y1="{py1}" x2="{xp:.2}" y2="{py0}" stroke="#555" stroke-dasharray="6 4"/>"##
            );
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", self.x_to_px(x), self.y_to_px(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                escape(&series.name),
                pts.join(" ")
            );
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                px1 + 12.0,
                px1 + 32.0,
                px1 + 38.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

type Group<'a> = Vec<&'a RunLog>;

/// File stem, title, y label, column.
type Metric = (&'static str, &'static str, &'static str, fn(&LogRow) -> f64);

fn group_logs(logs: &[RunLog]) -> BTreeMap<(ReplayPolicy, u64), Group<'_>> {
    let mut groups: BTreeMap<(ReplayPolicy, u64), Group<'_>> = BTreeMap::new();
    for log in logs {
        groups
            .entry((log.meta.policy, log.meta.offset.to_bits()))
            .or_default()
            .push(log);
    }
    groups
}

/// Row-wise mean of one column across the logs of a group.
fn mean_curve(group: &Group<'_>, metric: fn(&LogRow) -> f64) -> Vec<(f64, f64)> {
    let rows = &group[0].rows;
    (0..rows.len())
        .map(|i| {
            let sum: f64 = group.iter().map(|l| metric(&l.rows[i])).sum();
            (rows[i].step as f64, sum / group.len() as f64)
        })
        .collect()
}

fn label(policy: ReplayPolicy, offset_bits: u64, multi_offset: bool) -> String {
    if multi_offset {
        format!("{policy} (offset {})", f64::from_bits(offset_bits))
    } else {
        policy.to_string()
    }
}

/// Writes one SVG per metric into `out_dir` and returns the paths:
/// return, detector score and critic loss curves per policy (seed means), and
/// a pre/post-change priority chart for every prioritized policy.
///
/// Nothing is written for an empty slice.
pub fn emit_plots(logs: &[RunLog], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    if logs.is_empty() {
        eprintln!("warning: no run logs, no plots written");
        return Ok(Vec::new());
    }
    let steps: Vec<u64> = logs[0].rows.iter().map(|r| r.step).collect();
    for log in logs {
        if log.rows.iter().map(|r| r.step).ne(steps.iter().copied()) {
            return Err(Error::config(
                "logs",
                format!("run log for seed {} has a different step grid", log.meta.seed),
            ));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let markers: Vec<f64> = logs[0].meta.change_steps.iter().map(|&c| c as f64).collect();
    let groups = group_logs(logs);
    let multi_offset = groups
        .keys()
        .map(|k| k.1)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        > 1;

    let metrics: [Metric; 3] = [
        ("returns", "Episode return", "return", |r| r.episode_return),
        ("score", "Detector score", "JS score", |r| r.score),
        ("critic_loss", "Critic loss", "loss", |r| r.critic_loss),
    ];
    let mut written = Vec::new();
    for (file, title, y_label, metric) in metrics {
        let chart = LineChart {
            title: title.into(),
            x_label: "environment step".into(),
            y_label: y_label.into(),
            series: groups
                .iter()
                .map(|(&(p, o), g)| Series {
                    name: label(p, o, multi_offset),
                    points: mean_curve(g, metric),
                })
                .collect(),
            markers: markers.clone(),
        };
        let path = out_dir.join(format!("{file}.svg"));
        chart.save(&path)?;
        written.push(path);
    }
    for (&(p, o), g) in &groups {
        if p == ReplayPolicy::Uniform {
            continue;
        }
        let chart = LineChart {
            title: format!("Mean priority by partition ({})", label(p, o, multi_offset)),
            x_label: "environment step".into(),
            y_label: "priority".into(),
            series: vec![
                Series {
                    name: "pre-change".into(),
                    points: mean_curve(g, |r| r.pre_mean),
                },
                Series {
                    name: "post-change".into(),
                    points: mean_curve(g, |r| r.post_mean),
                },
            ],
            markers: markers.clone(),
        };
        let suffix = if multi_offset {
            format!("{p}_off{}", f64::from_bits(o))
        } else {
            p.to_string()
        };
        let path = out_dir.join(format!("priority_{suffix}.svg"));
        chart.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
