//! Episode metrics, policy evaluation and the metrics CSV.

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{make_policy, BaselineKind};
use crate::config::RunConfig;
use crate::env::{Env, EnvError, Request, StepResult};
use crate::pipeline::Event;
use crate::workload::TraceSet;

pub const METRICS_COLUMNS: [&str; 6] = [
    "episode",
    "mean_age_ms",
    "mean_energy_j",
    "mean_cost",
    "drops_total",
    "feasible_fraction",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad metrics file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u32,
    /// Mean age per judged (user, frame) pair.
    pub mean_age_ms: f64,
    /// Mean device energy per user per slot.
    pub mean_energy_j: f64,
    pub mean_cost: f64,
    pub drops_total: u64,
    pub feasible_fraction: f64,
}

/// Accumulates step results of one episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeAccumulator {
    age_sum_s: f64,
    judged: u64,
    rendered: u64,
    energy_sum_j: f64,
    cost_sum: f64,
    steps: u64,
    drops: u64,
    users: usize,
}

impl EpisodeAccumulator {
    pub fn new(users: usize) -> Self {
        Self {
            users,
            ..Self::default()
        }
    }

    pub fn push(&mut self, s: &StepResult) {
        for o in &s.info.outcomes {
            self.age_sum_s += o.age_s;
            self.judged += 1;
            self.rendered += o.rendered() as u64;
        }
        self.energy_sum_j += s.info.energy_j.iter().sum::<f64>();
        self.cost_sum += s.cost;
        self.drops += s.info.drops.iter().flatten().map(|&d| d as u64).sum::<u64>();
        self.steps += 1;
    }

    pub fn finish(&self, episode: u32) -> EpisodeMetrics {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        EpisodeMetrics {
            episode,
            mean_age_ms: 1e3 * ratio(self.age_sum_s, self.judged as f64),
            mean_energy_j: ratio(self.energy_sum_j, (self.steps * self.users as u64) as f64),
            mean_cost: ratio(self.cost_sum, self.steps as f64),
            drops_total: self.drops,
            feasible_fraction: ratio(self.rendered as f64, self.judged as f64),
        }
    }
}

/// Means of the per-episode metrics; drops are summed.
pub fn aggregate(rows: &[EpisodeMetrics]) -> Option<EpisodeMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some(EpisodeMetrics {
        episode: u32::MAX,
        mean_age_ms: mean(|r| r.mean_age_ms),
        mean_energy_j: mean(|r| r.mean_energy_j),
        mean_cost: mean(|r| r.mean_cost),
        drops_total: rows.iter().map(|r| r.drops_total).sum(),
        feasible_fraction: mean(|r| r.feasible_fraction),
    })
}

/// Runs one episode of a baseline. Events are handed to `on_events` after
/// every step when the environment logs them.
pub fn run_episode(
    env: &mut Env,
    kind: BaselineKind,
    episode: u32,
    seed: u64,
    mut on_events: impl FnMut(Vec<Event>),
) -> Result<EpisodeMetrics, EnvError> {
    let users = env.layout().users;
    let mut policy = make_policy(kind, env.config(), seed ^ 0x005e_ed0f_7a11_c1e5, episode as u64);
    let mut obs = env.reset(episode, seed)?;
    on_events(env.take_events());
    let mut acc = EpisodeAccumulator::new(users);
    let mut slot = 0u64;
    loop {
        let action = policy.act(slot, &obs);
        let s = env.step(&action)?;
        on_events(env.take_events());
        acc.push(&s);
        slot += 1;
        obs = s.obs;
        if s.done {
            break;
        }
    }
    Ok(acc.finish(episode))
}

/// Evaluates a baseline on the given episodes in parallel. Results are in
/// episode order and independent of thread scheduling.
pub fn evaluate_policy(
    config: &RunConfig,
    traces: Arc<TraceSet>,
    kind: BaselineKind,
    episodes: &[u32],
) -> Result<Vec<EpisodeMetrics>, EnvError> {
    episodes
        .par_iter()
        .map(|&e| {
            let mut env = Env::new(config.clone(), traces.clone())?;
            run_episode(&mut env, kind, e, config.seed, |_| {})
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },
}

/// Replays an action log of wire-protocol requests (one JSON object per
/// line) and returns metrics for every episode that was reset.
pub fn replay_action_log<R: Read>(
    config: &RunConfig,
    traces: Arc<TraceSet>,
    input: R,
) -> Result<Vec<EpisodeMetrics>, ReplayError> {
    let mut env = Env::new(config.clone(), traces).map_err(|e| ReplayError::Line {
        line: 0,
        detail: e.to_string(),
    })?;
    let users = env.layout().users;
    let mut out = Vec::new();
    let mut current: Option<(u32, EpisodeAccumulator)> = None;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |detail: String| ReplayError::Line { line: i + 1, detail };
        let req: Request = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        match req {
            Request::Reset { episode, seed } => {
                if let Some((e, acc)) = current.take() {
                    out.push(acc.finish(e));
                }
                env.reset(episode, seed).map_err(|e| fail(e.to_string()))?;
                current = Some((episode, EpisodeAccumulator::new(users)));
            }
            Request::Step { action } => {
                let (_, acc) = current.as_mut().ok_or_else(|| fail("step before reset".into()))?;
                let s = env.step_raw(&action).map_err(|e| fail(e.to_string()))?;
                acc.push(&s);
            }
            Request::Spec | Request::Close => {}
        }
    }
    if let Some((e, acc)) = current.take() {
        out.push(acc.finish(e));
    }
    Ok(out)
}

/// Decimal with at most 12 significant digits, shortest form.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Writes the provenance comments, header, one row per episode and the
/// `ALL` aggregate (omitted when there are no rows).
pub fn write_metrics_csv<W: Write>(
    mut out: W,
    config_hash: &str,
    seed: u64,
    extra_comments: &[String],
    rows: &[EpisodeMetrics],
) -> Result<(), MetricsError> {
    writeln!(out, "# config_sha256={config_hash}")?;
    writeln!(out, "# seed={seed}")?;
    for c in extra_comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    let record = |label: String, r: &EpisodeMetrics| {
        vec![
            label,
            format_sig12(r.mean_age_ms),
            format_sig12(r.mean_energy_j),
            format_sig12(r.mean_cost),
            r.drops_total.to_string(),
            format_sig12(r.feasible_fraction),
        ]
    };
    for r in rows {
        w.write_record(record(r.episode.to_string(), r))?;
    }
    if let Some(all) = aggregate(rows) {
        w.write_record(record("ALL".into(), &all))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub comments: Vec<String>,
    pub rows: Vec<EpisodeMetrics>,
    pub aggregate: Option<EpisodeMetrics>,
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<MetricsFile, MetricsError> {
    let mut text = String::new();
    let mut comments = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(c) => comments.push(c.trim().to_string()),
            None => {
                text.push_str(&line);
                text.push('\n');
            }
        }
    }
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(MetricsError::Format(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut agg = None;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64, MetricsError> {
            rec[j]
                .parse()
                .map_err(|e| MetricsError::Format(format!("row {i} column {}: {e}", METRICS_COLUMNS[j])))
        };
        let is_all = &rec[0] == "ALL";
        let m = EpisodeMetrics {
            episode: if is_all {
                u32::MAX
            } else {
                rec[0]
                    .parse()
                    .map_err(|e| MetricsError::Format(format!("row {i} episode: {e}")))?
            },
            mean_age_ms: num(1)?,
            mean_energy_j: num(2)?,
            mean_cost: num(3)?,
            drops_total: rec[4]
                .parse()
                .map_err(|e| MetricsError::Format(format!("row {i} drops_total: {e}")))?,
            feasible_fraction: num(5)?,
        };
        if is_all {
            agg = Some(m);
        } else {
            rows.push(m);
        }
    }
    Ok(MetricsFile {
        comments,
        rows,
        aggregate: agg,
    })
}
