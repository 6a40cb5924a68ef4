use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::ReplayPolicy;

/// First token of the comment line that opens every run log.
pub const RUNLOG_MAGIC: &str = "# deer-runlog v1";

/// One logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    /// Mean return of the episodes finished in this interval, or the last
    /// known value if none finished.
    pub episode_return: f64,
    /// Latest raw detector score, clamped to `[0, ln 2]`.
    pub score: f64,
    /// 1 if a change was detected in this interval.
    pub event: u8,
    pub epoch: u64,
    pub pre_count: usize,
    pub pre_mean: f64,
    pub pre_median: f64,
    pub post_count: usize,
    pub post_mean: f64,
    pub post_median: f64,
    /// Mean weighted critic loss over the interval's updates.
    pub critic_loss: f64,
    pub occupancy: usize,
    /// 1 once a Q snapshot exists.
    pub snapshot: u8,
}

impl LogRow {
    fn values(&self) -> [f64; 8] {
        [
            self.episode_return,
            self.score,
            self.pre_mean,
            self.pre_median,
            self.post_mean,
            self.post_median,
            self.critic_loss,
            self.step as f64,
        ]
    }
}

/// Identifies the run a log came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub env: String,
    pub policy: ReplayPolicy,
    pub seed: u64,
    pub offset: f64,
    pub change_steps: Vec<u64>,
    pub steps: u64,
}

impl RunMeta {
    fn header_line(&self) -> String {
        let changes: Vec<String> = self.change_steps.iter().map(u64::to_string).collect();
        format!(
            "{RUNLOG_MAGIC} env={} policy={} seed={} offset={:?} change_steps={} steps={}",
            self.env,
            self.policy,
            self.seed,
            self.offset,
            changes.join(";"),
            self.steps
        )
    }

    fn parse_header(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            what: "run log header".into(),
            message: m,
        };
        let rest = line
            .trim_end()
            .strip_prefix(RUNLOG_MAGIC)
            .ok_or_else(|| bad(format!("expected `{RUNLOG_MAGIC}`, got `{line}`")))?;
        let mut env = None;
        let mut policy = None;
        let mut seed = None;
        let mut offset = None;
        let mut change_steps = None;
        let mut steps = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed entry `{kv}`")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "env" => env = Some(v.to_string()),
                "policy" => policy = Some(v.parse::<ReplayPolicy>()?),
                "seed" => seed = Some(num(v)?),
                "offset" => offset = Some(v.parse::<f64>().map_err(|e| bad(format!("offset: {e}")))?),
                "change_steps" => {
                    change_steps = Some(
                        v.split(';')
                            .filter(|s| !s.is_empty())
                            .map(num)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "steps" => steps = Some(num(v)?),
                _ => {}
            }
        }
        let missing = |k: &str| bad(format!("missing `{k}`"));
        Ok(Self {
            env: env.ok_or_else(|| missing("env"))?,
            policy: policy.ok_or_else(|| missing("policy"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            offset: offset.ok_or_else(|| missing("offset"))?,
            change_steps: change_steps.ok_or_else(|| missing("change_steps"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub rows: Vec<LogRow>,
}

impl RunLog {
    /// Rows strictly increasing in step and every value finite.
    pub fn check(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Parse {
                    what: "run log".into(),
                    message: format!("step {} follows {}", w[1].step, w[0].step),
                });
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.values().iter().any(|v| !v.is_finite())) {
            return Err(Error::Parse {
                what: "run log".into(),
                message: format!("non-finite value at step {}", r.step),
            });
        }
        Ok(())
    }

    /// Steps of the intervals in which a change was detected.
    pub fn event_steps(&self) -> Vec<u64> {
        self.rows.iter().filter(|r| r.event != 0).map(|r| r.step).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<csv writer>", e);
        writeln!(out, "{}", self.meta.header_line()).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Parse {
                what: "run log row".into(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::io("<csv reader>", e))?;
        let meta = RunMeta::parse_header(&header)?;
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(reader).deserialize() {
            rows.push(rec.map_err(|e: csv::Error| Error::Parse {
                what: "run log row".into(),
                message: e.to_string(),
            })?);
        }
        let log = Self { meta, rows };
        log.check()?;
        Ok(log)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file).map_err(|e| match e {
            Error::Parse { what, message } => Error::Parse {
                what: format!("{what} in {}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// Loads every run log (`*.csv` starting with the run-log header) in `dir`,
    /// sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut logs = Vec::new();
        for p in paths {
            let mut first = String::new();
            let f = std::fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
            BufReader::new(f).read_line(&mut first).map_err(|e| Error::io(&p, e))?;
            if first.starts_with(RUNLOG_MAGIC) {
                logs.push(Self::load(&p)?);
            }
        }
        Ok(logs)
    }

    /// File name used by the CLI for this run.
    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_off{}_seed{}.csv",
            self.meta.env, self.meta.policy, self.meta.offset, self.meta.seed
        )
    }
}

#[cfg(test)]
pub(crate) fn synthetic_log(policy: ReplayPolicy, seed: u64, returns: &[f64]) -> RunLog {
    let rows = returns
        .iter()
        .enumerate()
        .map(|(i, &r)| LogRow {
            step: 100 * (i as u64 + 1),
            episode_return: r,
            score: 0.1,
            event: 0,
            epoch: 0,
            pre_count: 0,
            pre_mean: 0.0,
            pre_median: 0.0,
            post_count: 10,
            post_mean: 1.0,
            post_median: 1.0,
            critic_loss: 0.5,
            occupancy: 10,
            snapshot: 0,
        })
        .collect();
    RunLog {
        meta: RunMeta {
            env: "pendulum".into(),
            policy,
            seed,
            offset: 1.0,
            change_steps: vec![50 * returns.len() as u64],
            steps: 100 * returns.len() as u64,
        },
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut log = synthetic_log(ReplayPolicy::Deer, 7, &[-1.5, -0.25, 1e-17]);
        log.rows[1].event = 1;
        log.rows[2].snapshot = 1;
        let text = log.to_csv_string();
        assert!(text.starts_with(RUNLOG_MAGIC));
        let back = RunLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.event_steps(), vec![200]);
    }

    #[test]
    fn header_with_no_changes() {
        let mut log = synthetic_log(ReplayPolicy::Per, 0, &[1.0]);
        log.meta.change_steps.clear();
        let back = RunLog::read_csv(log.to_csv_string().as_bytes()).unwrap();
        assert!(back.meta.change_steps.is_empty());
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(RunLog::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn check_flags_bad_rows() {
        let mut log = synthetic_log(ReplayPolicy::Deer, 0, &[1.0, 2.0]);
        log.rows[1].step = log.rows[0].step;
        assert!(log.check().is_err());
        let mut log = synthetic_log(ReplayPolicy::Deer, 0, &[1.0, f64::NAN]);
        assert!(log.check().is_err());
        log.rows[1].episode_return = 0.0;
        log.check().unwrap();
    }
}
