use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vrsim::baselines::BaselineKind;
use vrsim::config::RunConfig;
use vrsim::env::{serve, Endpoint, Env};
use vrsim::metrics::{evaluate_policy, replay_action_log, run_episode, write_metrics_csv};
use vrsim::sweep::{parse_grid, run_sweep, write_sweep_csv, SweepSpec, SweepVar};
use vrsim::workload::{generate_traces, load_traces, save_traces, TraceSet};

#[derive(Parser)]
#[command(name = "vrsim", version, about = "Edge-device collaborative VR rendering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload trace file.
    GenTraces {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `system.episodes`.
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Serve the environment over newline-delimited JSON.
    ServeEnv {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `HOST:PORT` or `unix:PATH`.
        #[arg(long)]
        listen: String,
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Evaluate a baseline policy and write per-episode metrics.
    RunBaseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kind: BaselineKind,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long)]
        out: PathBuf,
        /// Write every tile transition to this file (runs sequentially).
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Replay a JSONL action log and write per-episode metrics.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep total bandwidth or edge GPU for a baseline.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        var: SweepVar,
        /// `start:stop:step` (inclusive) or a comma-separated list.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        kind: BaselineKind,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

/// Loads traces from a file, or generates `episodes` from the config.
fn traces_for(config: &RunConfig, path: Option<&Path>, episodes: u32) -> Result<Arc<TraceSet>> {
    let set = match path {
        Some(p) => {
            let t = load_traces(p).with_context(|| format!("loading traces {}", p.display()))?;
            let bad = t.validate(&config.workload, config.system.room_size_m);
            if let Some(v) = bad.first() {
                bail!("trace {} has {} out-of-range values, first: {v}", p.display(), bad.len());
            }
            t
        }
        None => generate_traces(
            &config.workload,
            config.system.mobility,
            config.trace_shape(),
            episodes,
            config.seed,
        ),
    };
    Ok(Arc::new(set))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenTraces {
            config,
            out,
            seed,
            episodes,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let n = episodes.unwrap_or(cfg.system.episodes);
            let t = generate_traces(&cfg.workload, cfg.system.mobility, cfg.trace_shape(), n, cfg.seed);
            save_traces(&out, &t)?;
            log::info!("wrote {} records to {}", t.records().count(), out.display());
        }
        Command::ServeEnv { config, listen, traces } => {
            let cfg = load_config(config.as_deref())?;
            let endpoint: Endpoint = listen.parse().map_err(anyhow::Error::msg)?;
            let t = traces_for(&cfg, traces.as_deref(), cfg.system.episodes)?;
            Env::new(cfg.clone(), t.clone())?;
            serve(&endpoint, cfg, t)?;
        }
        Command::RunBaseline {
            config,
            kind,
            traces,
            episodes,
            out,
            event_log,
        } => {
            let cfg = load_config(config.as_deref())?;
            let t = traces_for(&cfg, traces.as_deref(), episodes)?;
            let ids: Vec<u32> = (0..episodes).collect();
            let rows = match event_log {
                None => evaluate_policy(&cfg, t, kind, &ids)?,
                Some(path) => {
                    let mut log = create(&path)?;
                    let mut env = Env::new(cfg.clone(), t)?;
                    env.enable_event_log();
                    let mut rows = Vec::new();
                    for &e in &ids {
                        writeln!(log, "# episode {e}")?;
                        let mut io_err = None;
                        let m = run_episode(&mut env, kind, e, cfg.seed, |events| {
                            for ev in events {
                                if let Err(err) = writeln!(log, "{ev}") {
                                    io_err.get_or_insert(err);
                                }
                            }
                        })?;
                        if let Some(err) = io_err {
                            return Err(err.into());
                        }
                        rows.push(m);
                    }
                    log.flush()?;
                    rows
                }
            };
            write_metrics_csv(create(&out)?, &cfg.hash(), cfg.seed, &[format!("policy={kind}")], &rows)?;
        }
        Command::Evaluate {
            config,
            traces,
            actions,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let t = traces_for(&cfg, traces.as_deref(), cfg.system.episodes)?;
            let file = File::open(&actions).with_context(|| format!("opening {}", actions.display()))?;
            let rows = replay_action_log(&cfg, t, BufReader::new(file))?;
            write_metrics_csv(
                create(&out)?,
                &cfg.hash(),
                cfg.seed,
                &[format!("actions={}", actions.display())],
                &rows,
            )?;
        }
        Command::Sweep {
            config,
            var,
            grid,
            kind,
            traces,
            episodes,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let grid = parse_grid(&grid).map_err(anyhow::Error::msg)?;
            let t = traces_for(&cfg, traces.as_deref(), episodes)?;
            let spec = SweepSpec {
                var,
                grid,
                kind,
                episodes: (0..episodes).collect(),
            };
            let points = run_sweep(&spec, &cfg, t);
            write_sweep_csv(create(&out)?, &spec, &cfg.hash(), cfg.seed, &points)?;
            let failed = points.iter().filter(|p| p.result.is_err()).count();
            if failed > 0 {
                log::warn!("{failed} of {} sweep points failed", points.len());
            }
        }
    }
    Ok(())
}
