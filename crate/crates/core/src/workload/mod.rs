//! Request model and synthetic trace generation.
//!
//! A trace holds, for every (episode, slot, user), the foreground object
//! parameters of the current frame and the background parameters of the `L`
//! frames in the prediction window, plus the user's position. All loads are
//! treated as GPU cycles serviced at a cycles/s rate.

mod trace;

pub use trace::{load_traces, read_traces, save_traces, write_traces, TraceError, TRACE_FIXED_COLUMNS};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("foreground pixels {pixels} exceed the screen size {screen}")]
    ForegroundTooLarge { pixels: u64, screen: u64 },
    #[error("invalid workload parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("incomplete trace: {0}")]
    Incomplete(String),
}

/// FLOP/cycle estimate of rendering a tile: per-vertex animation cost plus
/// per-pixel texture cost.
pub fn estimate_flops(
    vertex_complexity: f64,
    vertices: f64,
    pixel_complexity: f64,
    pixels: f64,
) -> f64 {
    vertex_complexity * vertices + pixel_complexity * pixels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    pub bits_per_pixel: f64,
    pub screen_width: u32,
    pub screen_height: u32,
    /// Fraction of the screen covered by foreground objects.
    pub fg_pixel_fraction: [f64; 2],
    pub fg_vertices: [u32; 2],
    pub bg_vertices: [u32; 2],
    pub fg_vertex_complexity: [u32; 2],
    pub bg_vertex_complexity: [u32; 2],
    pub fg_pixel_complexity: [u32; 2],
    pub bg_pixel_complexity: [u32; 2],
    /// Prediction window length `L`.
    pub window_len: usize,
    pub compression_ratio: f64,
    /// First-order smoothing weight on the previous slot's draw; 0 gives
    /// independent slots.
    pub smoothing: f64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            bits_per_pixel: 40.0,
            screen_width: 2064,
            screen_height: 2208,
            fg_pixel_fraction: [0.0, 0.5],
            fg_vertices: [1_000, 40_000],
            bg_vertices: [10_000, 20_000],
            fg_vertex_complexity: [100, 600],
            bg_vertex_complexity: [100, 200],
            fg_pixel_complexity: [5, 50],
            bg_pixel_complexity: [5, 20],
            window_len: 5,
            compression_ratio: 0.016,
            smoothing: 0.0,
        }
    }
}

impl WorkloadParams {
    pub fn screen_pixels(&self) -> u64 {
        self.screen_width as u64 * self.screen_height as u64
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |name, reason: String| Err(WorkloadError::InvalidParam { name, reason });
        if !(self.bits_per_pixel > 0.0 && self.bits_per_pixel.is_finite()) {
            return invalid("bits_per_pixel", format!("must be > 0, got {}", self.bits_per_pixel));
        }
        if self.screen_width == 0 || self.screen_height == 0 {
            return invalid("screen", "dimensions must be positive".into());
        }
        let [flo, fhi] = self.fg_pixel_fraction;
        if !(0.0 <= flo && flo <= fhi && fhi <= 1.0) {
            return invalid(
                "fg_pixel_fraction",
                format!("need 0 <= lo <= hi <= 1, got [{flo}, {fhi}]"),
            );
        }
        for (name, [lo, hi]) in [
            ("fg_vertices", self.fg_vertices),
            ("bg_vertices", self.bg_vertices),
            ("fg_vertex_complexity", self.fg_vertex_complexity),
            ("bg_vertex_complexity", self.bg_vertex_complexity),
            ("fg_pixel_complexity", self.fg_pixel_complexity),
            ("bg_pixel_complexity", self.bg_pixel_complexity),
        ] {
            if lo == 0 || lo > hi {
                return invalid(name, format!("need 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        }
        if self.window_len == 0 {
            return invalid("window_len", "must be at least 1".into());
        }
        if !(self.compression_ratio > 0.0 && self.compression_ratio <= 1.0) {
            return invalid(
                "compression_ratio",
                format!("must lie in (0, 1], got {}", self.compression_ratio),
            );
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return invalid("smoothing", format!("must lie in [0, 1), got {}", self.smoothing));
        }
        Ok(())
    }

    /// Raw background tile size `D^b`, identical for every user and frame.
    pub fn background_size_bits(&self) -> f64 {
        self.bits_per_pixel * self.screen_pixels() as f64
    }

    pub fn compressed_background_bits(&self) -> f64 {
        self.compression_ratio * self.background_size_bits()
    }

    /// Foreground tile size; zero means no foreground object in view.
    pub fn foreground_size_bits(&self, pixels: u64) -> Result<f64, WorkloadError> {
        let screen = self.screen_pixels();
        if pixels > screen {
            return Err(WorkloadError::ForegroundTooLarge { pixels, screen });
        }
        Ok(self.bits_per_pixel * pixels as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForegroundRequest {
    pub vertices: u32,
    pub vertex_complexity: u32,
    pub pixel_complexity: u32,
    pub pixels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundRequest {
    pub vertices: u32,
    pub vertex_complexity: u32,
    pub pixel_complexity: u32,
}

/// Workload parameters of one user at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub episode: u32,
    pub user: u32,
    pub slot: u32,
    pub x: f64,
    pub y: f64,
    pub fg: ForegroundRequest,
    /// Background requests for frames `slot..slot + L`.
    pub bg_window: Vec<BackgroundRequest>,
}

/// Loads and sizes derived from a [`TrackRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct RequestProfile {
    pub fg_load_cycles: f64,
    pub fg_size_bits: f64,
    pub bg_loads_cycles: Vec<f64>,
    pub bg_size_bits: f64,
}

impl RequestProfile {
    pub fn from_record(record: &TrackRecord, params: &WorkloadParams) -> Result<Self, WorkloadError> {
        let fg = record.fg;
        let screen = params.screen_pixels() as f64;
        Ok(Self {
            fg_load_cycles: estimate_flops(
                fg.vertex_complexity as f64,
                fg.vertices as f64,
                fg.pixel_complexity as f64,
                fg.pixels as f64,
            ),
            fg_size_bits: params.foreground_size_bits(fg.pixels as u64)?,
            bg_loads_cycles: record
                .bg_window
                .iter()
                .map(|bg| {
                    estimate_flops(
                        bg.vertex_complexity as f64,
                        bg.vertices as f64,
                        bg.pixel_complexity as f64,
                        screen,
                    )
                })
                .collect(),
            bg_size_bits: params.background_size_bits(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mobility {
    /// Uniform position per episode, held for the whole episode.
    #[default]
    Static,
    /// Straight-line motion at constant speed toward uniformly drawn waypoints.
    RandomWaypoint { speed_mps: f64 },
}

/// Geometry of the generated scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceShape {
    pub users: usize,
    pub horizon: usize,
    pub room_size_m: f64,
    pub slot_s: f64,
}

/// All records of one episode, indexed `[slot][user]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub id: u32,
    pub slots: Vec<Vec<TrackRecord>>,
}

impl EpisodeTrace {
    pub fn users(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn record(&self, slot: usize, user: usize) -> &TrackRecord {
        &self.slots[slot][user]
    }

    pub fn records(&self) -> impl Iterator<Item = &TrackRecord> {
        self.slots.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    pub episodes: BTreeMap<u32, EpisodeTrace>,
}

impl TraceSet {
    pub fn episode(&self, id: u32) -> Option<&EpisodeTrace> {
        self.episodes.get(&id)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TrackRecord> {
        self.episodes.values().flat_map(EpisodeTrace::records)
    }

    /// Groups a record stream into episodes, requiring every episode to be a
    /// dense `[slot][user]` grid with a common shape.
    pub fn from_records<I>(records: I) -> Result<Self, WorkloadError>
    where
        I: IntoIterator<Item = TrackRecord>,
    {
        let mut grouped: BTreeMap<u32, BTreeMap<(u32, u32), TrackRecord>> = BTreeMap::new();
        for r in records {
            let key = (r.slot, r.user);
            let ep = r.episode;
            if grouped.entry(ep).or_default().insert(key, r).is_some() {
                return Err(WorkloadError::Incomplete(format!(
                    "duplicate record for episode {ep}, slot {}, user {}",
                    key.0, key.1
                )));
            }
        }
        let mut episodes = BTreeMap::new();
        let mut shape: Option<(usize, usize, usize)> = None;
        for (id, recs) in grouped {
            let slots = recs.keys().map(|k| k.0).max().map_or(0, |m| m as usize + 1);
            let users = recs.keys().map(|k| k.1).max().map_or(0, |m| m as usize + 1);
            if recs.len() != slots * users {
                return Err(WorkloadError::Incomplete(format!(
                    "episode {id} has {} records, expected {slots} slots x {users} users",
                    recs.len()
                )));
            }
            let window = recs.values().next().map_or(0, |r| r.bg_window.len());
            if let Some(s) = shape {
                if s != (slots, users, window) {
                    return Err(WorkloadError::Incomplete(format!(
                        "episode {id} has shape {:?}, other episodes have {:?}",
                        (slots, users, window),
                        s
                    )));
                }
            }
            shape = Some((slots, users, window));
            let mut grid: Vec<Vec<TrackRecord>> = (0..slots).map(|_| Vec::with_capacity(users)).collect();
            // BTreeMap iterates in (slot, user) order.
            for ((slot, _), r) in recs {
                if r.bg_window.len() != window {
                    return Err(WorkloadError::Incomplete(format!(
                        "episode {id} slot {slot} user {} has window {}, expected {window}",
                        r.user,
                        r.bg_window.len()
                    )));
                }
                grid[slot as usize].push(r);
            }
            episodes.insert(id, EpisodeTrace { id, slots: grid });
        }
        Ok(Self { episodes })
    }

    /// Lists every field outside its configured range.
    pub fn validate(&self, params: &WorkloadParams, room_size_m: f64) -> Vec<RangeViolation> {
        self.records()
            .flat_map(|r| record_violations(r, params, room_size_m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeViolation {
    pub episode: u32,
    pub user: u32,
    pub slot: u32,
    pub field: String,
    pub value: f64,
}

impl std::fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "episode {} user {} slot {}: {} = {} out of range",
            self.episode, self.user, self.slot, self.field, self.value
        )
    }
}

pub fn record_violations(r: &TrackRecord, p: &WorkloadParams, room_size_m: f64) -> Vec<RangeViolation> {
    let mut out = Vec::new();
    let mut check = |field: String, value: f64, lo: f64, hi: f64| {
        if !(lo <= value && value <= hi) {
            out.push(RangeViolation {
                episode: r.episode,
                user: r.user,
                slot: r.slot,
                field,
                value,
            });
        }
    };
    let span = |[lo, hi]: [u32; 2]| (lo as f64, hi as f64);
    check("x".into(), r.x, 0.0, room_size_m);
    check("y".into(), r.y, 0.0, room_size_m);
    let (lo, hi) = span(p.fg_vertices);
    check("n_vf".into(), r.fg.vertices as f64, lo, hi);
    let (lo, hi) = span(p.fg_vertex_complexity);
    check("c_vf".into(), r.fg.vertex_complexity as f64, lo, hi);
    let (lo, hi) = span(p.fg_pixel_complexity);
    check("c_pf".into(), r.fg.pixel_complexity as f64, lo, hi);
    let screen = p.screen_pixels() as f64;
    check(
        "n_pf".into(),
        r.fg.pixels as f64,
        (p.fg_pixel_fraction[0] * screen).round(),
        (p.fg_pixel_fraction[1] * screen).round(),
    );
    if r.bg_window.len() != p.window_len {
        check("bg_window_len".into(), r.bg_window.len() as f64, p.window_len as f64, p.window_len as f64);
    }
    for (l, bg) in r.bg_window.iter().enumerate() {
        let (lo, hi) = span(p.bg_vertices);
        check(format!("n_vb_{l}"), bg.vertices as f64, lo, hi);
        let (lo, hi) = span(p.bg_vertex_complexity);
        check(format!("c_vb_{l}"), bg.vertex_complexity as f64, lo, hi);
        let (lo, hi) = span(p.bg_pixel_complexity);
        check(format!("c_pb_{l}"), bg.pixel_complexity as f64, lo, hi);
    }
    out
}

fn draw_u32<R: Rng>(rng: &mut R, [lo, hi]: [u32; 2], prev: Option<u32>, smoothing: f64) -> u32 {
    let fresh = rng.random_range(lo..=hi);
    match prev {
        Some(p) if smoothing > 0.0 => {
            let v = (smoothing * p as f64 + (1.0 - smoothing) * fresh as f64).round() as u32;
            v.clamp(lo, hi)
        }
        _ => fresh,
    }
}

fn draw_fraction<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2], prev: Option<f64>, smoothing: f64) -> f64 {
    let fresh = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    match prev {
        Some(p) if smoothing > 0.0 => (smoothing * p + (1.0 - smoothing) * fresh).clamp(lo, hi),
        _ => fresh,
    }
}

fn uniform_position<R: Rng>(rng: &mut R, room: f64) -> (f64, f64) {
    (rng.random_range(0.0..=room), rng.random_range(0.0..=room))
}

struct WaypointState {
    pos: (f64, f64),
    target: (f64, f64),
}

/// Generates one episode. Each episode draws from its own ChaCha stream, so
/// episodes can be produced independently and in any order.
pub fn generate_episode(
    params: &WorkloadParams,
    mobility: Mobility,
    shape: TraceShape,
    episode: u32,
    seed: u64,
) -> EpisodeTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    let screen = params.screen_pixels() as f64;
    let room = shape.room_size_m;

    let mut movers: Vec<WaypointState> = (0..shape.users)
        .map(|_| {
            let pos = uniform_position(&mut rng, room);
            let target = match mobility {
                Mobility::Static => pos,
                Mobility::RandomWaypoint { .. } => uniform_position(&mut rng, room),
            };
            WaypointState { pos, target }
        })
        .collect();

    let mut prev_fg: Vec<Option<(ForegroundRequest, f64)>> = vec![None; shape.users];
    let mut prev_bg: Vec<Option<Vec<BackgroundRequest>>> = vec![None; shape.users];
    let s = params.smoothing;

    let mut slots = Vec::with_capacity(shape.horizon);
    for slot in 0..shape.horizon {
        let mut row = Vec::with_capacity(shape.users);
        for user in 0..shape.users {
            if let Mobility::RandomWaypoint { speed_mps } = mobility {
                if slot > 0 {
                    let m = &mut movers[user];
                    let step = speed_mps * shape.slot_s;
                    let (dx, dy) = (m.target.0 - m.pos.0, m.target.1 - m.pos.1);
                    let dist = dx.hypot(dy);
                    if dist <= step {
                        m.pos = m.target;
                        m.target = uniform_position(&mut rng, room);
                    } else {
                        m.pos = (m.pos.0 + dx / dist * step, m.pos.1 + dy / dist * step);
                    }
                }
            }
            let pf = prev_fg[user];
            let frac = draw_fraction(&mut rng, params.fg_pixel_fraction, pf.map(|p| p.1), s);
            let fg = ForegroundRequest {
                vertices: draw_u32(&mut rng, params.fg_vertices, pf.map(|p| p.0.vertices), s),
                vertex_complexity: draw_u32(
                    &mut rng,
                    params.fg_vertex_complexity,
                    pf.map(|p| p.0.vertex_complexity),
                    s,
                ),
                pixel_complexity: draw_u32(
                    &mut rng,
                    params.fg_pixel_complexity,
                    pf.map(|p| p.0.pixel_complexity),
                    s,
                ),
                pixels: (frac * screen).round() as u32,
            };
            prev_fg[user] = Some((fg, frac));
            let pb = prev_bg[user].take();
            let bg_window: Vec<BackgroundRequest> = (0..params.window_len)
                .map(|l| {
                    let prev = pb.as_ref().map(|w| w[l]);
                    BackgroundRequest {
                        vertices: draw_u32(&mut rng, params.bg_vertices, prev.map(|p| p.vertices), s),
                        vertex_complexity: draw_u32(
                            &mut rng,
                            params.bg_vertex_complexity,
                            prev.map(|p| p.vertex_complexity),
                            s,
                        ),
                        pixel_complexity: draw_u32(
                            &mut rng,
                            params.bg_pixel_complexity,
                            prev.map(|p| p.pixel_complexity),
                            s,
                        ),
                    }
                })
                .collect();
            prev_bg[user] = Some(bg_window.clone());
            let (x, y) = movers[user].pos;
            row.push(TrackRecord {
                episode,
                user: user as u32,
                slot: slot as u32,
                x,
                y,
                fg,
                bg_window,
            });
        }
        slots.push(row);
    }
    EpisodeTrace { id: episode, slots }
}

/// Generates episodes `0..episodes`.
pub fn generate_traces(
    params: &WorkloadParams,
    mobility: Mobility,
    shape: TraceShape,
    episodes: u32,
    seed: u64,
) -> TraceSet {
    TraceSet {
        episodes: (0..episodes)
            .map(|e| (e, generate_episode(params, mobility, shape, e, seed)))
            .collect(),
    }
}
