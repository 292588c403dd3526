//! Time-invariant reference policies and a uniform random policy.
//!
//! All of them split bandwidth and edge GPU evenly, except the random policy
//! which draws both splits uniformly from the simplex.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{simplex_split, Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Foreground on device, next-frame background at the edge.
    Pff,
    /// Foreground on device, last-in-window background at the edge.
    Plf,
    /// Everything at the edge, last-in-window background.
    Meclf,
    Random,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Pff,
        BaselineKind::Plf,
        BaselineKind::Meclf,
        BaselineKind::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Pff => "pff",
            BaselineKind::Plf => "plf",
            BaselineKind::Meclf => "meclf",
            BaselineKind::Random => "random",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pff" => Ok(BaselineKind::Pff),
            "plf" => Ok(BaselineKind::Plf),
            "meclf" => Ok(BaselineKind::Meclf),
            "random" => Ok(BaselineKind::Random),
            _ => Err(format!("unknown baseline `{s}` (pff, plf, meclf, random)")),
        }
    }
}

pub trait Policy {
    fn act(&mut self, slot: u64, obs: &[f64]) -> Action;
}

#[derive(Debug, Clone)]
struct Dims {
    users: usize,
    window: usize,
    bandwidth_hz: f64,
    gpu_hz: f64,
}

impl Dims {
    fn from_config(c: &RunConfig) -> Self {
        Self {
            users: c.system.users,
            window: c.workload.window_len,
            bandwidth_hz: c.resources.total_bandwidth_hz,
            gpu_hz: c.resources.total_edge_gpu_hz,
        }
    }

    fn even(&self, total: f64) -> Vec<f64> {
        simplex_split(total, &vec![0.0; self.users]).expect("finite weights")
    }
}

/// One of the three fixed baselines.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    action: Action,
}

impl FixedPolicy {
    pub fn new(kind: BaselineKind, config: &RunConfig) -> Option<Self> {
        let d = Dims::from_config(config);
        let (fg_local, l) = match kind {
            BaselineKind::Pff => (true, 1.min(d.window - 1)),
            BaselineKind::Plf => (true, d.window - 1),
            BaselineKind::Meclf => (false, d.window - 1),
            BaselineKind::Random => return None,
        };
        let mut xb = vec![false; d.window];
        xb[l] = true;
        Some(Self {
            action: Action {
                fg_on_device: vec![fg_local; d.users],
                bg_render: vec![xb; d.users],
                bg_on_device: vec![vec![false; d.window]; d.users],
                bandwidth_hz: d.even(d.bandwidth_hz),
                gpu_hz: d.even(d.gpu_hz),
            },
        })
    }
}

impl Policy for FixedPolicy {
    fn act(&mut self, _slot: u64, _obs: &[f64]) -> Action {
        self.action.clone()
    }
}

/// Fair coins for every bit; allocation weights `ln(E)` with `E ~ Exp(1)`,
/// so the softmax split is uniform on the simplex.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    dims: Dims,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(config: &RunConfig, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            dims: Dims::from_config(config),
            rng,
        }
    }

    fn weights(&mut self) -> Vec<f64> {
        (0..self.dims.users)
            .map(|_| {
                let u: f64 = 1.0 - self.rng.random::<f64>();
                (-u.ln()).ln()
            })
            .collect()
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _slot: u64, _obs: &[f64]) -> Action {
        let d = self.dims.clone();
        let mut bits = |n: usize| (0..n).map(|_| self.rng.random::<bool>()).collect::<Vec<_>>();
        let fg_on_device = bits(d.users);
        let bg_render = (0..d.users).map(|_| bits(d.window)).collect();
        let bg_on_device = (0..d.users).map(|_| bits(d.window)).collect();
        let wb = self.weights();
        let wf = self.weights();
        Action {
            fg_on_device,
            bg_render,
            bg_on_device,
            bandwidth_hz: simplex_split(d.bandwidth_hz, &wb).expect("finite weights"),
            gpu_hz: simplex_split(d.gpu_hz, &wf).expect("finite weights"),
        }
    }
}

/// Builds a policy; `stream` separates random draws across episodes.
pub fn make_policy(kind: BaselineKind, config: &RunConfig, seed: u64, stream: u64) -> Box<dyn Policy + Send> {
    match FixedPolicy::new(kind, config) {
        Some(p) => Box::new(p),
        None => Box::new(RandomPolicy::new(config, seed, stream)),
    }
}
