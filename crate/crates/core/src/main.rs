use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deer_core::detector::DetectorConfig;
use deer_core::harness::{
    detect_bench, emit_plots, run_experiment, summarize, summary_csv, summary_text, BenchConfig, ExperimentConfig,
    RunLog,
};
use deer_core::replay::ReplayPolicy;
use deer_core::{Error, Result};

#[derive(Parser)]
#[command(name = "deer", version, about = "Change-aware prioritized replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write a CSV run log for each.
    Run {
        /// TOML experiment config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<ReplayPolicy>,
        #[arg(long)]
        offset: Option<f64>,
        /// Output directory for the run logs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Summarize every run log in a directory.
    Summarize {
        dir: PathBuf,
        /// Where to write summary.csv and summary.txt (default: DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts for the run logs in a directory.
    Plot {
        dir: PathBuf,
        /// Output directory for the charts (default: DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the change detector on synthetic N(0, 1) reward streams.
    DetectBench {
        /// Take the detector settings from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of stationary and shifted streams.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 5_000)]
        change_at: u64,
        /// Mean shift in noise standard deviations.
        #[arg(long, default_value_t = 5.0)]
        shift: f64,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Command) -> Result<()> {
    match cli {
        Command::Run {
            config,
            seed,
            policy,
            offset,
            out,
            steps,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(o) = offset {
                cfg.offset = o;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            cfg.validate()?;
            create_dir(&cfg.out_dir)?;
            for &s in &cfg.seeds {
                let log = run_experiment(&cfg, s)?;
                let path = cfg.out_dir.join(log.file_name());
                log.save(&path)?;
                let events = log.event_steps();
                println!(
                    "seed {s}: {} rows, detections at {:?} -> {}",
                    log.rows.len(),
                    events,
                    path.display()
                );
            }
            write(&cfg.out_dir.join("config.toml"), &cfg.to_toml_string())?;
        }
        Command::Summarize { dir, out } => {
            let logs = RunLog::load_dir(&dir)?;
            if logs.is_empty() {
                return Err(Error::NotReady(format!("no run logs in {}", dir.display())));
            }
            let rows = summarize(&logs);
            let out = out.unwrap_or(dir);
            create_dir(&out)?;
            write(&out.join("summary.csv"), &summary_csv(&rows))?;
            let text = summary_text(&rows);
            write(&out.join("summary.txt"), &text)?;
            print!("{text}");
        }
        Command::Plot { dir, out } => {
            let logs = RunLog::load_dir(&dir)?;
            for p in emit_plots(&logs, out.unwrap_or(dir))? {
                println!("{}", p.display());
            }
        }
        Command::DetectBench {
            config,
            seeds,
            steps,
            change_at,
            shift,
            out,
        } => {
            let detector = match config {
                Some(p) => ExperimentConfig::load(p)?.detector_config(),
                None => DetectorConfig::default(),
            };
            let report = detect_bench(&BenchConfig {
                detector,
                seeds,
                steps,
                change_at,
                shift,
            })?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                write(&p, &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
