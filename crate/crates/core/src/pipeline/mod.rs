//! Deadline-aware queue network of the edge-device rendering pipeline.
//!
//! Each user owns five FIFO queues: edge rendering, compression,
//! transmission, decompression and device rendering. Tiles enter a rendering
//! queue at the start of their sensor slot, are served in continuous time
//! under piecewise-constant resources, and land in a merge pool. Frames are
//! judged at their motion-to-photon deadline; tiles that can no longer make
//! it are removed by active queue management at slot starts.

mod network;

pub use network::{
    DropCounts, Event, Location, QueueNetwork, TileStats, Transition, UserDecision, UserResources,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::RequestProfile;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("sensor slot {sensor} cannot serve frame {frame} with window {window}")]
    OutsideWindow { sensor: u64, frame: u64, window: usize },
    #[error("clock regression: requested {requested} s, network clock at {clock} s")]
    ClockRegression { requested: f64, clock: f64 },
    #[error("frame {frame} of user {user} evaluated twice")]
    DoubleEvaluation { user: usize, frame: u64 },
    #[error("user index {0} out of range")]
    UnknownUser(usize),
    #[error("decision for user {user} has {got} window entries, expected {expected}")]
    WindowMismatch { user: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TileKind {
    Foreground,
    Background,
}

/// The five per-user queues, in observation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueueKind {
    EdgeRender,
    Compress,
    Transmit,
    Decompress,
    DeviceRender,
}

impl QueueKind {
    pub const ALL: [QueueKind; 5] = [
        QueueKind::EdgeRender,
        QueueKind::Compress,
        QueueKind::Transmit,
        QueueKind::Decompress,
        QueueKind::DeviceRender,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            QueueKind::EdgeRender => "r_e",
            QueueKind::Compress => "c",
            QueueKind::Transmit => "t",
            QueueKind::Decompress => "d",
            QueueKind::DeviceRender => "r_d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileId(pub u64);

impl std::fmt::Display for TileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One foreground or background work item.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: TileId,
    pub user: usize,
    pub kind: TileKind,
    pub sensor_slot: u64,
    pub frame_slot: u64,
    /// `sensor_slot * tau`; durations are measured from here.
    pub origin_s: f64,
    pub deadline_s: f64,
    pub load_cycles: f64,
    pub remaining_cycles: f64,
    /// Payload size as currently held (raw, or compressed after `Q^c`).
    pub size_bits: f64,
    pub remaining_bits: f64,
    pub fixed_remaining_s: f64,
    /// Arrival time at the current queue.
    pub arrival_s: f64,
    /// Time the tile reached the merge pool.
    pub completed_s: Option<f64>,
}

impl Tile {
    /// Time spent since the sensor slot, up to `now` or completion.
    pub fn accumulated_duration_s(&self, now: f64) -> f64 {
        self.completed_s.unwrap_or(now) - self.origin_s
    }
}

/// Scalar parameters of the timing model.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub slot_s: f64,
    pub mtp_s: f64,
    pub merge_s: f64,
    pub compress_s: f64,
    pub decompress_s: f64,
    pub compressed_bg_bits: f64,
    pub window_len: usize,
    /// Use `tau_m + Delta_c + Delta_d` for the compression-queue drop rule
    /// instead of `tau_m + Delta_d`.
    pub strict_compress_aqm: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            slot_s: 0.01,
            mtp_s: 0.02,
            merge_s: 0.002,
            compress_s: 0.005,
            decompress_s: 0.008,
            compressed_bg_bits: 0.016 * 182_292_480.0,
            window_len: 5,
            strict_compress_aqm: false,
        }
    }
}

impl PipelineParams {
    pub fn slot_start(&self, slot: u64) -> f64 {
        slot as f64 * self.slot_s
    }

    pub fn frame_deadline(&self, frame: u64) -> f64 {
        frame as f64 * self.slot_s + self.mtp_s
    }

    /// Remaining MTP budget of a frame at the start of `slot`, computed from
    /// the slot difference so grid-aligned values are exact.
    pub fn remaining_at_slot(&self, frame: u64, slot: u64) -> f64 {
        (frame as f64 - slot as f64) * self.slot_s + self.mtp_s
    }

    /// AQM drop threshold for a tile of `kind` waiting in `queue`.
    pub fn drop_threshold(&self, queue: QueueKind, kind: TileKind) -> f64 {
        let m = self.merge_s;
        match (queue, kind) {
            (QueueKind::EdgeRender, TileKind::Foreground) => m,
            (QueueKind::EdgeRender, TileKind::Background) => m + self.compress_s + self.decompress_s,
            (QueueKind::Compress, _) if self.strict_compress_aqm => {
                m + self.compress_s + self.decompress_s
            }
            (QueueKind::Compress, _) => m + self.decompress_s,
            (QueueKind::Transmit, TileKind::Foreground) => m,
            (QueueKind::Transmit, TileKind::Background) => m + self.decompress_s,
            (QueueKind::Decompress, _) | (QueueKind::DeviceRender, _) => m,
        }
    }
}

/// MTP budget of a background tile for frame `frame` rendered from sensor
/// slot `sensor`, measured from `sensor * tau`.
pub fn background_deadline(
    sensor: u64,
    frame: u64,
    slot_s: f64,
    mtp_s: f64,
    window_len: usize,
) -> Result<f64, PipelineError> {
    if sensor > frame || frame - sensor >= window_len as u64 {
        return Err(PipelineError::OutsideWindow {
            sensor,
            frame,
            window: window_len,
        });
    }
    Ok((frame - sensor) as f64 * slot_s + mtp_s)
}

/// Result of judging one user's frame at its deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub user: usize,
    pub frame: u64,
    pub fg_feasible: bool,
    pub bg_feasible: bool,
    /// Sensor slot of the background tile selected for the frame.
    pub chosen_bg_sensor: Option<u64>,
    pub age_s: f64,
    /// End-to-end foreground latency including merging, if the tile arrived.
    pub fg_latency_s: Option<f64>,
}

impl FrameOutcome {
    /// Whether the frame was newly rendered rather than time-warped.
    pub fn rendered(&self) -> bool {
        self.fg_feasible && self.bg_feasible
    }
}

/// Age of the sensor information behind a frame, or the ATW penalty.
pub fn age_metric(frame: u64, chosen_bg_sensor: Option<u64>, rendered: bool, slot_s: f64, atw_penalty_s: f64) -> f64 {
    match (rendered, chosen_bg_sensor) {
        (true, Some(k)) => (frame - k) as f64 * slot_s,
        _ => atw_penalty_s,
    }
}

/// Device energy charged to one user's decisions at one slot: per-tile
/// decompression of edge-rendered backgrounds plus local rendering energy
/// `beta * cycles * f^2`.
pub fn device_energy(
    decision: &UserDecision,
    profile: &RequestProfile,
    device_gpu_hz: f64,
    beta: f64,
    decompress_energy_j: f64,
) -> f64 {
    let mut edge_bg = 0usize;
    let mut local_cycles = if decision.fg_on_device {
        profile.fg_load_cycles
    } else {
        0.0
    };
    for (l, &render) in decision.bg_render.iter().enumerate() {
        if !render {
            continue;
        }
        if decision.bg_on_device[l] {
            local_cycles += profile.bg_loads_cycles[l];
        } else {
            edge_bg += 1;
        }
    }
    edge_bg as f64 * decompress_energy_j + beta * local_cycles * device_gpu_hz * device_gpu_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> RequestProfile {
        RequestProfile {
            fg_load_cycles: 1e7,
            fg_size_bits: 1e6,
            bg_loads_cycles: vec![2e7; 5],
            bg_size_bits: 182_292_480.0,
        }
    }

    #[test]
    fn background_deadline_examples() {
        assert!((background_deadline(7, 7, 0.01, 0.02, 5).unwrap() - 0.02).abs() < 1e-15);
        assert!((background_deadline(3, 7, 0.01, 0.02, 5).unwrap() - 0.06).abs() < 1e-15);
        assert!(background_deadline(8, 7, 0.01, 0.02, 5).is_err());
        assert!(background_deadline(2, 7, 0.01, 0.02, 5).is_err());
    }

    #[test]
    fn age_examples() {
        assert_eq!(age_metric(9, Some(9), true, 0.01, 0.5), 0.0);
        assert!((age_metric(9, Some(5), true, 0.01, 0.5) - 0.04).abs() < 1e-15);
        assert_eq!(age_metric(9, Some(5), false, 0.01, 0.5), 0.5);
        assert_eq!(age_metric(9, None, false, 0.01, 0.5), 0.5);
    }

    #[test]
    fn energy_examples() {
        let p = profile();
        let none = UserDecision::idle(5);
        assert_eq!(device_energy(&none, &p, 3e9, 1e-25, 10.0), 0.0);

        let fg_local = UserDecision {
            fg_on_device: true,
            ..UserDecision::idle(5)
        };
        let e = device_energy(&fg_local, &p, 3e9, 1e-25, 10.0);
        assert!((e - 9.0).abs() < 1e-9 * 9.0);

        let mut two_edge = UserDecision::idle(5);
        two_edge.bg_render[1] = true;
        two_edge.bg_render[3] = true;
        assert_eq!(device_energy(&two_edge, &p, 3e9, 1e-25, 10.0), 20.0);

        // z^b on a non-rendered slot has no effect.
        let mut ignored = UserDecision::idle(5);
        ignored.bg_on_device[2] = true;
        assert_eq!(device_energy(&ignored, &p, 3e9, 1e-25, 10.0), 0.0);
    }

    #[test]
    fn drop_thresholds_match_defaults() {
        let p = PipelineParams::default();
        assert_eq!(p.drop_threshold(QueueKind::EdgeRender, TileKind::Foreground), 0.002);
        assert_eq!(p.drop_threshold(QueueKind::EdgeRender, TileKind::Background), 0.015);
        assert_eq!(p.drop_threshold(QueueKind::Compress, TileKind::Background), 0.01);
        assert_eq!(p.drop_threshold(QueueKind::Transmit, TileKind::Background), 0.01);
        assert_eq!(p.drop_threshold(QueueKind::Decompress, TileKind::Background), 0.002);
        let strict = PipelineParams {
            strict_compress_aqm: true,
            ..PipelineParams::default()
        };
        assert_eq!(strict.drop_threshold(QueueKind::Compress, TileKind::Background), 0.015);
    }

    #[test]
    fn remaining_budget_is_exact_on_the_grid() {
        let p = PipelineParams::default();
        for k in 1..400u64 {
            assert_eq!(p.remaining_at_slot(k - 1, k), 0.01);
            assert_eq!(p.remaining_at_slot(k, k), 0.02);
        }
    }
}
