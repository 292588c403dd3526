//! Parameter sweeps over total bandwidth or total edge GPU.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::config::RunConfig;
use crate::metrics::{aggregate, evaluate_policy, format_sig12, EpisodeMetrics, MetricsError};
use crate::workload::TraceSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    Bandwidth,
    Gpu,
}

impl SweepVar {
    pub fn label(self) -> &'static str {
        match self {
            SweepVar::Bandwidth => "bandwidth",
            SweepVar::Gpu => "gpu",
        }
    }

    pub fn apply(self, config: &mut RunConfig, value: f64) {
        match self {
            SweepVar::Bandwidth => config.resources.total_bandwidth_hz = value,
            SweepVar::Gpu => config.resources.total_edge_gpu_hz = value,
        }
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bandwidth" => Ok(SweepVar::Bandwidth),
            "gpu" => Ok(SweepVar::Gpu),
            _ => Err(format!("unknown sweep variable `{s}` (bandwidth, gpu)")),
        }
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad grid value `{t}`: {e}"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts.as_slice() else {
            return Err(format!("range grid needs start:stop:step, got `{s}`"));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0) || b < a {
            return Err(format!("range grid needs step > 0 and stop >= start, got `{s}`"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| a + i as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err("empty grid".into());
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub grid: Vec<f64>,
    pub kind: BaselineKind,
    pub episodes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub result: Result<EpisodeMetrics, String>,
}

/// Evaluates every grid point with the same seed and episodes. A failing
/// point is recorded and the rest continue.
pub fn run_sweep(spec: &SweepSpec, base: &RunConfig, traces: Arc<TraceSet>) -> Vec<SweepPoint> {
    spec.grid
        .par_iter()
        .map(|&value| {
            let mut cfg = base.clone();
            spec.var.apply(&mut cfg, value);
            let result = cfg
                .validate()
                .map_err(|e| e.to_string())
                .and_then(|_| evaluate_policy(&cfg, traces.clone(), spec.kind, &spec.episodes).map_err(|e| e.to_string()))
                .and_then(|rows| aggregate(&rows).ok_or_else(|| "no episodes".to_string()));
            if let Err(e) = &result {
                log::warn!("sweep point {}={value} failed: {e}", spec.var.label());
            }
            SweepPoint { value, result }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(
    mut out: W,
    spec: &SweepSpec,
    config_hash: &str,
    seed: u64,
    points: &[SweepPoint],
) -> Result<(), MetricsError> {
    writeln!(out, "# config_sha256={config_hash}")?;
    writeln!(out, "# seed={seed}")?;
    writeln!(out, "# policy={} episodes={}", spec.kind, spec.episodes.len())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        spec.var.label(),
        "mean_age_ms",
        "mean_energy_j",
        "mean_cost",
        "drops_total",
        "feasible_fraction",
        "error",
    ])?;
    for p in points {
        let v = format_sig12(p.value);
        match &p.result {
            Ok(m) => w.write_record([
                v,
                format_sig12(m.mean_age_ms),
                format_sig12(m.mean_energy_j),
                format_sig12(m.mean_cost),
                m.drops_total.to_string(),
                format_sig12(m.feasible_fraction),
                String::new(),
            ])?,
            Err(e) => w.write_record([v, String::new(), String::new(), String::new(), String::new(), String::new(), e.clone()])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid_is_inclusive() {
        let g = parse_grid("100e6:800e6:100e6").unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 100e6);
        assert_eq!(g[7], 800e6);
    }

    #[test]
    fn list_grid() {
        assert_eq!(parse_grid("1, 2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
    }

    #[test]
    fn bad_grids() {
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("5:1:1").is_err());
        assert!(parse_grid("1:5:0").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn failing_point_is_recorded() {
        let mut c = RunConfig::default();
        c.system.users = 2;
        c.system.horizon = 5;
        let t = Arc::new(crate::workload::generate_traces(&c.workload, c.system.mobility, c.trace_shape(), 1, 1));
        let spec = SweepSpec {
            var: SweepVar::Bandwidth,
            grid: vec![-1.0, 200e6],
            kind: BaselineKind::Plf,
            episodes: vec![0],
        };
        let pts = run_sweep(&spec, &c, t);
        assert!(pts[0].result.is_err());
        assert!(pts[1].result.is_ok());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &spec, "h", 1, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }
}
