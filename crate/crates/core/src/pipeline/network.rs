use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{
    age_metric, FrameOutcome, PipelineError, PipelineParams, QueueKind, Tile, TileId, TileKind,
};
use crate::workload::RequestProfile;

/// Control decisions for one user at one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserDecision {
    /// `z^f`: render the foreground locally.
    pub fg_on_device: bool,
    /// `x^b`: render the background of frame `k + l`.
    pub bg_render: Vec<bool>,
    /// `z^b`: render that background locally (ignored where `x^b` is 0).
    pub bg_on_device: Vec<bool>,
}

impl UserDecision {
    /// Foreground at the edge, no backgrounds.
    pub fn idle(window: usize) -> Self {
        Self {
            fg_on_device: false,
            bg_render: vec![false; window],
            bg_on_device: vec![false; window],
        }
    }
}

/// Service rates of one user over a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserResources {
    pub edge_gpu_hz: f64,
    pub device_gpu_hz: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Queue(QueueKind),
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Enqueued(QueueKind),
    Moved { from: QueueKind, to: Location },
    Dropped(QueueKind),
    Merged,
    Expired,
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Enqueued(q) => write!(f, "enqueue {}", q.label()),
            Transition::Moved { from, to: Location::Queue(q) } => {
                write!(f, "{}->{}", from.label(), q.label())
            }
            Transition::Moved { from, to: Location::Pool } => write!(f, "{}->pool", from.label()),
            Transition::Dropped(q) => write!(f, "drop {}", q.label()),
            Transition::Merged => write!(f, "merge"),
            Transition::Expired => write!(f, "expire"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub user: usize,
    pub tile: TileId,
    pub transition: Transition,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.9} {} {} {}",
            self.time_s, self.user, self.tile, self.transition
        )
    }
}

/// Tile accounting. `enqueued = merged + expired + dropped + in-flight`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TileStats {
    pub enqueued: u64,
    pub merged: u64,
    pub expired: u64,
    pub dropped: u64,
}

/// AQM drop counts, `[user][queue]`.
pub type DropCounts = Vec<[u32; 5]>;

#[derive(Debug, Clone)]
struct UserQueues {
    queues: [VecDeque<Tile>; 5],
    /// `O^Y`: departure time of the most recent completion per queue.
    last_departure: [f64; 5],
    pool: Vec<Tile>,
    evaluated: BTreeSet<u64>,
}

impl UserQueues {
    fn new() -> Self {
        Self {
            queues: Default::default(),
            last_departure: [0.0; 5],
            pool: Vec::new(),
            evaluated: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueueNetwork {
    params: PipelineParams,
    users: Vec<UserQueues>,
    next_id: u64,
    clock_s: f64,
    stats: TileStats,
    events: Option<Vec<Event>>,
}

fn remaining_work(tile: &Tile, q: QueueKind) -> f64 {
    match q {
        QueueKind::EdgeRender | QueueKind::DeviceRender => tile.remaining_cycles,
        QueueKind::Transmit => tile.remaining_bits,
        QueueKind::Compress | QueueKind::Decompress => tile.fixed_remaining_s,
    }
}

fn set_remaining_work(tile: &mut Tile, q: QueueKind, v: f64) {
    match q {
        QueueKind::EdgeRender | QueueKind::DeviceRender => tile.remaining_cycles = v,
        QueueKind::Transmit => tile.remaining_bits = v,
        QueueKind::Compress | QueueKind::Decompress => tile.fixed_remaining_s = v,
    }
}

/// Serves a FIFO queue over `[t0, t1)` at a constant rate. Completed tiles
/// are returned with their departure time; a partially served head keeps its
/// reduced work.
/// Completions and latencies this close past a boundary count as on time.
/// Backlogged fixed-duration stages otherwise drift across slot edges.
const BOUNDARY_EPS_S: f64 = 1e-12;

fn serve_fifo(
    queue: &mut VecDeque<Tile>,
    last_departure: &mut f64,
    kind: QueueKind,
    rate: f64,
    t0: f64,
    t1: f64,
) -> Vec<(Tile, f64)> {
    let mut done = Vec::new();
    let mut now = t0;
    while let Some(head) = queue.front_mut() {
        let start = now.max(head.arrival_s).max(*last_departure);
        if start >= t1 || rate <= 0.0 {
            break;
        }
        let work = remaining_work(head, kind);
        let finish = start + work / rate;
        if finish <= t1 + BOUNDARY_EPS_S {
            let finish = finish.min(t1);
            set_remaining_work(head, kind, 0.0);
            let tile = queue.pop_front().expect("head exists");
            *last_departure = finish;
            now = finish;
            done.push((tile, finish));
        } else {
            set_remaining_work(head, kind, work - rate * (t1 - start));
            break;
        }
    }
    done
}

impl QueueNetwork {
    pub fn new(params: PipelineParams, users: usize) -> Self {
        Self {
            params,
            users: (0..users).map(|_| UserQueues::new()).collect(),
            next_id: 0,
            clock_s: 0.0,
            stats: TileStats::default(),
            events: None,
        }
    }

    /// Records every tile transition from now on.
    pub fn enable_event_log(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[Event] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn stats(&self) -> TileStats {
        self.stats
    }

    pub fn queue(&self, user: usize, q: QueueKind) -> &VecDeque<Tile> {
        &self.users[user].queues[q.index()]
    }

    pub fn pool(&self, user: usize) -> &[Tile] {
        &self.users[user].pool
    }

    pub fn last_departure(&self, user: usize, q: QueueKind) -> f64 {
        self.users[user].last_departure[q.index()]
    }

    pub fn in_flight(&self) -> u64 {
        self.users
            .iter()
            .map(|u| u.queues.iter().map(VecDeque::len).sum::<usize>() + u.pool.len())
            .sum::<usize>() as u64
    }

    fn log(&mut self, time_s: f64, user: usize, tile: TileId, transition: Transition) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(Event {
                time_s,
                user,
                tile,
                transition,
            });
        }
    }

    fn new_tile(
        &mut self,
        user: usize,
        kind: TileKind,
        sensor: u64,
        frame: u64,
        load_cycles: f64,
        size_bits: f64,
    ) -> Tile {
        let id = TileId(self.next_id);
        self.next_id += 1;
        let origin_s = self.params.slot_start(sensor);
        Tile {
            id,
            user,
            kind,
            sensor_slot: sensor,
            frame_slot: frame,
            origin_s,
            deadline_s: self.params.frame_deadline(frame),
            load_cycles,
            remaining_cycles: load_cycles,
            size_bits,
            remaining_bits: size_bits,
            fixed_remaining_s: 0.0,
            arrival_s: origin_s,
            completed_s: None,
        }
    }

    fn push(&mut self, user: usize, q: QueueKind, tile: Tile) {
        self.stats.enqueued += 1;
        self.log(tile.arrival_s, user, tile.id, Transition::Enqueued(q));
        self.users[user].queues[q.index()].push_back(tile);
    }

    /// Places this slot's tiles into the rendering queues: the foreground
    /// first, then the selected backgrounds in ascending frame order.
    pub fn enqueue(
        &mut self,
        user: usize,
        slot: u64,
        decision: &UserDecision,
        profile: &RequestProfile,
    ) -> Result<Vec<TileId>, PipelineError> {
        if user >= self.users.len() {
            return Err(PipelineError::UnknownUser(user));
        }
        let window = self.params.window_len;
        for got in [
            decision.bg_render.len(),
            decision.bg_on_device.len(),
            profile.bg_loads_cycles.len(),
        ] {
            if got != window {
                return Err(PipelineError::WindowMismatch {
                    user,
                    got,
                    expected: window,
                });
            }
        }
        let t = self.params.slot_start(slot);
        if t < self.clock_s {
            return Err(PipelineError::ClockRegression {
                requested: t,
                clock: self.clock_s,
            });
        }
        let mut ids = Vec::new();
        let fg = self.new_tile(
            user,
            TileKind::Foreground,
            slot,
            slot,
            profile.fg_load_cycles,
            profile.fg_size_bits,
        );
        ids.push(fg.id);
        let q = if decision.fg_on_device {
            QueueKind::DeviceRender
        } else {
            QueueKind::EdgeRender
        };
        self.push(user, q, fg);
        for l in 0..window {
            if !decision.bg_render[l] {
                continue;
            }
            let tile = self.new_tile(
                user,
                TileKind::Background,
                slot,
                slot + l as u64,
                profile.bg_loads_cycles[l],
                profile.bg_size_bits,
            );
            ids.push(tile.id);
            let q = if decision.bg_on_device[l] {
                QueueKind::DeviceRender
            } else {
                QueueKind::EdgeRender
            };
            self.push(user, q, tile);
        }
        Ok(ids)
    }

    /// Runs every queue over `[t0, t1)` with rates held constant.
    pub fn advance(&mut self, resources: &[UserResources], t0: f64, t1: f64) -> Result<(), PipelineError> {
        if t0 < self.clock_s || t1 < t0 {
            return Err(PipelineError::ClockRegression {
                requested: t0,
                clock: self.clock_s,
            });
        }
        for (user, res) in resources.iter().enumerate().take(self.users.len()) {
            self.advance_user(user, res, t0, t1);
        }
        self.clock_s = t1;
        Ok(())
    }

    fn advance_user(&mut self, user: usize, res: &UserResources, t0: f64, t1: f64) {
        let p = self.params.clone();
        let mut moves: Vec<(f64, TileId, QueueKind, Location)> = Vec::new();
        let mut to_pool: Vec<Tile> = Vec::new();
        let uq = &mut self.users[user];

        let [ref mut q_re, ref mut q_c, ref mut q_t, ref mut q_d, ref mut q_rd] = uq.queues;
        let [ref mut o_re, ref mut o_c, ref mut o_t, ref mut o_d, ref mut o_rd] = uq.last_departure;

        // Edge rendering feeds transmission (fg) and compression (bg).
        let mut t_arrivals: Vec<Tile> = Vec::new();
        for (mut tile, at) in serve_fifo(q_re, o_re, QueueKind::EdgeRender, res.edge_gpu_hz, t0, t1) {
            tile.arrival_s = at;
            match tile.kind {
                TileKind::Foreground => {
                    tile.remaining_bits = tile.size_bits;
                    moves.push((at, tile.id, QueueKind::EdgeRender, Location::Queue(QueueKind::Transmit)));
                    t_arrivals.push(tile);
                }
                TileKind::Background => {
                    tile.fixed_remaining_s = p.compress_s;
                    moves.push((at, tile.id, QueueKind::EdgeRender, Location::Queue(QueueKind::Compress)));
                    q_c.push_back(tile);
                }
            }
        }
        for (mut tile, at) in serve_fifo(q_c, o_c, QueueKind::Compress, 1.0, t0, t1) {
            tile.arrival_s = at;
            tile.size_bits = p.compressed_bg_bits;
            tile.remaining_bits = p.compressed_bg_bits;
            moves.push((at, tile.id, QueueKind::Compress, Location::Queue(QueueKind::Transmit)));
            t_arrivals.push(tile);
        }
        // Stable: at equal times, edge-rendered foregrounds precede compressed backgrounds.
        t_arrivals.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
        q_t.extend(t_arrivals);

        for (mut tile, at) in serve_fifo(q_t, o_t, QueueKind::Transmit, res.rate_bps, t0, t1) {
            match tile.kind {
                TileKind::Foreground => {
                    tile.completed_s = Some(at);
                    moves.push((at, tile.id, QueueKind::Transmit, Location::Pool));
                    to_pool.push(tile);
                }
                TileKind::Background => {
                    // Decompression starts when reception completes.
                    tile.arrival_s = at;
                    tile.fixed_remaining_s = p.decompress_s;
                    moves.push((at, tile.id, QueueKind::Transmit, Location::Queue(QueueKind::Decompress)));
                    q_d.push_back(tile);
                }
            }
        }
        for (mut tile, at) in serve_fifo(q_d, o_d, QueueKind::Decompress, 1.0, t0, t1) {
            tile.completed_s = Some(at);
            moves.push((at, tile.id, QueueKind::Decompress, Location::Pool));
            to_pool.push(tile);
        }
        for (mut tile, at) in serve_fifo(q_rd, o_rd, QueueKind::DeviceRender, res.device_gpu_hz, t0, t1) {
            tile.completed_s = Some(at);
            moves.push((at, tile.id, QueueKind::DeviceRender, Location::Pool));
            to_pool.push(tile);
        }

        for (at, id, from, to) in moves {
            self.log(at, user, id, Transition::Moved { from, to });
        }
        for tile in to_pool {
            if self.users[user].evaluated.contains(&tile.frame_slot) {
                let at = tile.completed_s.unwrap_or(t1);
                self.stats.expired += 1;
                self.log(at, user, tile.id, Transition::Expired);
            } else {
                self.users[user].pool.push(tile);
            }
        }
    }

    /// Drops every queued tile whose remaining MTP budget at the start of
    /// `slot` is at or below its queue's threshold.
    pub fn apply_aqm(&mut self, slot: u64) -> DropCounts {
        let now = self.params.slot_start(slot);
        let mut counts = vec![[0u32; 5]; self.users.len()];
        let mut dropped_log = Vec::new();
        for (user, uq) in self.users.iter_mut().enumerate() {
            for q in QueueKind::ALL {
                let params = &self.params;
                uq.queues[q.index()].retain(|tile| {
                    let rest = params.remaining_at_slot(tile.frame_slot, slot);
                    let keep = rest > params.drop_threshold(q, tile.kind);
                    if !keep {
                        counts[user][q.index()] += 1;
                        dropped_log.push((user, tile.id, q));
                    }
                    keep
                });
            }
        }
        self.stats.dropped += dropped_log.len() as u64;
        for (user, id, q) in dropped_log {
            self.log(now, user, id, Transition::Dropped(q));
        }
        counts
    }

    /// Judges frame `frame` of `user` from the merge pool, then discards all
    /// pool tiles for frames up to and including it.
    pub fn evaluate_frame(&mut self, user: usize, frame: u64, atw_penalty_s: f64) -> Result<FrameOutcome, PipelineError> {
        if user >= self.users.len() {
            return Err(PipelineError::UnknownUser(user));
        }
        if !self.users[user].evaluated.insert(frame) {
            return Err(PipelineError::DoubleEvaluation { user, frame });
        }
        let p = &self.params;
        let pool = &self.users[user].pool;

        let fg_latency_s = pool
            .iter()
            .find(|t| t.kind == TileKind::Foreground && t.frame_slot == frame)
            .map(|t| t.accumulated_duration_s(f64::NAN) + p.merge_s);
        let fg_feasible = fg_latency_s.is_some_and(|lat| lat <= p.mtp_s + BOUNDARY_EPS_S);

        let chosen_bg_sensor = pool
            .iter()
            .filter(|t| t.kind == TileKind::Background && t.frame_slot == frame)
            .filter(|t| {
                let budget = (frame - t.sensor_slot) as f64 * p.slot_s + p.mtp_s;
                t.accumulated_duration_s(f64::NAN) + p.merge_s <= budget + BOUNDARY_EPS_S
            })
            .map(|t| t.sensor_slot)
            .max();
        let bg_feasible = chosen_bg_sensor.is_some();
        let rendered = fg_feasible && bg_feasible;
        let age_s = age_metric(frame, chosen_bg_sensor, rendered, p.slot_s, atw_penalty_s);
        let at = p.frame_deadline(frame);

        let (gone, kept): (Vec<Tile>, Vec<Tile>) = std::mem::take(&mut self.users[user].pool)
            .into_iter()
            .partition(|t| t.frame_slot <= frame);
        self.users[user].pool = kept;
        for t in gone {
            let used = rendered
                && t.frame_slot == frame
                && match t.kind {
                    TileKind::Foreground => true,
                    TileKind::Background => Some(t.sensor_slot) == chosen_bg_sensor,
                };
            if used {
                self.stats.merged += 1;
                self.log(at, user, t.id, Transition::Merged);
            } else {
                self.stats.expired += 1;
                self.log(at, user, t.id, Transition::Expired);
            }
        }

        Ok(FrameOutcome {
            user,
            frame,
            fg_feasible,
            bg_feasible,
            chosen_bg_sensor,
            age_s,
            fg_latency_s,
        })
    }

    /// Expires everything still queued or pooled (end of episode).
    pub fn flush(&mut self) {
        let at = self.clock_s;
        let mut gone = Vec::new();
        for (user, uq) in self.users.iter_mut().enumerate() {
            for q in uq.queues.iter_mut() {
                gone.extend(q.drain(..).map(|t| (user, t.id)));
            }
            gone.extend(uq.pool.drain(..).map(|t| (user, t.id)));
        }
        self.stats.expired += gone.len() as u64;
        for (user, id) in gone {
            self.log(at, user, id, Transition::Expired);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PipelineParams {
        PipelineParams::default()
    }

    fn profile(fg_cycles: f64, fg_bits: f64, bg_cycles: f64) -> RequestProfile {
        RequestProfile {
            fg_load_cycles: fg_cycles,
            fg_size_bits: fg_bits,
            bg_loads_cycles: vec![bg_cycles; 5],
            bg_size_bits: 182_292_480.0,
        }
    }

    fn res(edge: f64, rate: f64) -> Vec<UserResources> {
        vec![UserResources {
            edge_gpu_hz: edge,
            device_gpu_hz: 3e9,
            rate_bps: rate,
        }]
    }

    #[test]
    fn minimal_decision_enqueues_one_edge_foreground() {
        let mut net = QueueNetwork::new(params(), 1);
        net.enqueue(0, 0, &UserDecision::idle(5), &profile(1e7, 1e6, 5e7)).unwrap();
        assert_eq!(net.queue(0, QueueKind::EdgeRender).len(), 1);
        assert_eq!(net.queue(0, QueueKind::EdgeRender)[0].kind, TileKind::Foreground);
        assert_eq!(net.in_flight(), 1);
    }

    #[test]
    fn foreground_precedes_same_slot_backgrounds() {
        let mut net = QueueNetwork::new(params(), 1);
        let d = UserDecision {
            fg_on_device: false,
            bg_render: vec![true; 5],
            bg_on_device: vec![false; 5],
        };
        net.enqueue(0, 3, &d, &profile(1e7, 1e6, 5e7)).unwrap();
        let q = net.queue(0, QueueKind::EdgeRender);
        assert_eq!(q.len(), 6);
        assert_eq!(q[0].kind, TileKind::Foreground);
        let frames: Vec<u64> = q.iter().skip(1).map(|t| t.frame_slot).collect();
        assert_eq!(frames, vec![3, 4, 5, 6, 7]);
        assert!(q.iter().all(|t| t.arrival_s == 0.03 && t.sensor_slot == 3));
    }

    #[test]
    fn ignored_location_bit_for_unrendered_background() {
        let mut net = QueueNetwork::new(params(), 1);
        let d = UserDecision {
            fg_on_device: true,
            bg_render: vec![false; 5],
            bg_on_device: vec![true; 5],
        };
        net.enqueue(0, 0, &d, &profile(1e7, 1e6, 5e7)).unwrap();
        assert_eq!(net.queue(0, QueueKind::DeviceRender).len(), 1);
        assert_eq!(net.in_flight(), 1);
    }

    #[test]
    fn hand_traced_edge_foreground() {
        let mut net = QueueNetwork::new(params(), 1);
        net.enqueue(0, 0, &UserDecision::idle(5), &profile(23_786_560.0, 91_146_240.0, 0.0))
            .unwrap();
        net.advance(&res(14e9, 10e9), 0.0, 0.01).unwrap();
        net.advance(&res(14e9, 10e9), 0.01, 0.02).unwrap();
        let out = net.evaluate_frame(0, 0, 0.5).unwrap();
        let lat = out.fg_latency_s.unwrap();
        assert!((lat - 0.012_813_664).abs() < 1e-12, "{lat}");
        assert!(out.fg_feasible);
        assert!(!out.bg_feasible);
        assert_eq!(out.age_s, 0.5);
    }

    #[test]
    fn local_render_duration() {
        let mut net = QueueNetwork::new(params(), 1);
        net.enable_event_log();
        let d = UserDecision {
            fg_on_device: true,
            ..UserDecision::idle(5)
        };
        net.enqueue(0, 0, &d, &profile(23_786_560.0, 1.0, 0.0)).unwrap();
        net.advance(&res(0.0, 0.0), 0.0, 0.01).unwrap();
        let done = net.pool(0)[0].completed_s.unwrap();
        assert!((done - 23_786_560.0 / 3e9).abs() < 1e-15);
        assert_eq!(net.last_departure(0, QueueKind::DeviceRender), done);
    }

    #[test]
    fn partial_transmission_carries_over() {
        let mut net = QueueNetwork::new(params(), 1);
        // Zero-load foreground needing 12 ms of transmission at 1 Gbit/s.
        net.enqueue(0, 0, &UserDecision::idle(5), &profile(0.0, 12e6, 0.0)).unwrap();
        net.advance(&res(14e9, 1e9), 0.0, 0.01).unwrap();
        let q = net.queue(0, QueueKind::Transmit);
        assert_eq!(q.len(), 1);
        assert!((q[0].remaining_bits - 2e6).abs() < 1e-3);
        net.advance(&res(14e9, 1e9), 0.01, 0.02).unwrap();
        let done = net.pool(0)[0].completed_s.unwrap();
        assert!((done - 0.012).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_stalls_without_progress() {
        let mut net = QueueNetwork::new(params(), 1);
        net.enqueue(0, 0, &UserDecision::idle(5), &profile(1e6, 1e6, 0.0)).unwrap();
        net.advance(&res(0.0, 1e9), 0.0, 0.01).unwrap();
        assert_eq!(net.queue(0, QueueKind::EdgeRender)[0].remaining_cycles, 1e6);
    }

    #[test]
    fn background_edge_path_timing() {
        let mut net = QueueNetwork::new(params(), 1);
        let mut d = UserDecision::idle(5);
        d.fg_on_device = true;
        d.bg_render[3] = true;
        // bg: 14e6 cycles at 14 GHz = 1 ms, compress 5 ms, tx 2_916_679.68 bits at 1 Gbps, decompress 8 ms.
        net.enqueue(0, 0, &d, &profile(3e6, 0.0, 14e6)).unwrap();
        for k in 0..3u64 {
            let t0 = k as f64 * 0.01;
            net.advance(&res(14e9, 1e9), t0, (k + 1) as f64 * 0.01).unwrap();
        }
        let bg = net
            .pool(0)
            .iter()
            .find(|t| t.kind == TileKind::Background)
            .unwrap();
        let expected = 0.001 + 0.005 + 0.016 * 182_292_480.0 / 1e9 + 0.008;
        assert!((bg.completed_s.unwrap() - expected).abs() < 1e-12);
        assert_eq!(bg.frame_slot, 3);
    }

    #[test]
    fn aqm_threshold_examples() {
        let mut net = QueueNetwork::new(params(), 1);
        let mut d = UserDecision::idle(5);
        d.fg_on_device = true;
        d.bg_render = vec![true, false, false, false, false];
        // Slot 0 tiles: fg (frame 0) on device, bg (frame 0) at edge.
        net.enqueue(0, 0, &d, &profile(1e12, 0.0, 1e12)).unwrap();
        // At slot 1 the frame-0 budget is 10 ms: bg in r_e (threshold 15 ms)
        // is dropped, fg in r_d (threshold 2 ms) is kept.
        net.advance(&res(1.0, 1.0), 0.0, 0.01).unwrap();
        let c = net.apply_aqm(1);
        assert_eq!(c[0][QueueKind::EdgeRender.index()], 1);
        assert_eq!(c[0][QueueKind::DeviceRender.index()], 0);
        // At slot 2 the budget is 0 ms and the fg goes too.
        net.advance(&res(1.0, 1.0), 0.01, 0.02).unwrap();
        let c = net.apply_aqm(2);
        assert_eq!(c[0][QueueKind::DeviceRender.index()], 1);
        assert_eq!(net.stats().dropped, 2);
        assert_eq!(net.in_flight(), 0);
    }

    #[test]
    fn aqm_inclusive_boundary_in_transmit_queue() {
        let mut net = QueueNetwork::new(params(), 1);
        let mut d = UserDecision::idle(5);
        d.fg_on_device = true;
        d.bg_render[0] = true;
        net.enqueue(0, 4, &d, &profile(1.0, 0.0, 1.0)).unwrap();
        // Fast render and compression, no transmission capacity.
        for k in 4..5u64 {
            let t0 = k as f64 * 0.01;
            net.advance(&res(1e12, 0.0), t0, (k + 1) as f64 * 0.01).unwrap();
        }
        assert_eq!(net.queue(0, QueueKind::Transmit).len(), 1);
        // Frame 4 at slot 5: budget exactly 10 ms = tau_m + Delta_d.
        let c = net.apply_aqm(5);
        assert_eq!(c[0][QueueKind::Transmit.index()], 1);
    }

    #[test]
    fn double_evaluation_is_rejected() {
        let mut net = QueueNetwork::new(params(), 1);
        net.evaluate_frame(0, 2, 0.5).unwrap();
        assert_eq!(
            net.evaluate_frame(0, 2, 0.5),
            Err(PipelineError::DoubleEvaluation { user: 0, frame: 2 })
        );
    }

    #[test]
    fn clock_regression_is_rejected() {
        let mut net = QueueNetwork::new(params(), 1);
        net.advance(&res(1.0, 1.0), 0.0, 0.02).unwrap();
        assert!(matches!(
            net.advance(&res(1.0, 1.0), 0.01, 0.02),
            Err(PipelineError::ClockRegression { .. })
        ));
        assert!(matches!(
            net.enqueue(0, 1, &UserDecision::idle(5), &profile(1.0, 1.0, 1.0)),
            Err(PipelineError::ClockRegression { .. })
        ));
    }

    #[test]
    fn freshest_feasible_background_wins() {
        let mut net = QueueNetwork::new(params(), 1);
        let fast = res(1e15, 1e15);
        // Frame 6 backgrounds from sensor slots 2 and 4, foreground at slot 6.
        let mut d2 = UserDecision::idle(5);
        d2.fg_on_device = true;
        d2.bg_render[4] = true;
        let mut d4 = UserDecision::idle(5);
        d4.fg_on_device = true;
        d4.bg_render[2] = true;
        let mut dfg = UserDecision::idle(5);
        dfg.fg_on_device = true;
        let p = profile(1.0, 0.0, 1.0);
        for k in 0..7u64 {
            let d = match k {
                2 => &d2,
                4 => &d4,
                _ => &dfg,
            };
            net.enqueue(0, k, d, &p).unwrap();
            let t0 = k as f64 * 0.01;
            net.advance(&fast, t0, (k + 1) as f64 * 0.01).unwrap();
        }
        let out = net.evaluate_frame(0, 6, 0.5).unwrap();
        assert!(out.rendered());
        assert_eq!(out.chosen_bg_sensor, Some(4));
        assert!((out.age_s - 0.02).abs() < 1e-15);
    }

    #[test]
    fn missing_foreground_falls_back_to_atw() {
        let mut net = QueueNetwork::new(params(), 1);
        let out = net.evaluate_frame(0, 0, 0.5).unwrap();
        assert!(!out.fg_feasible && !out.rendered());
        assert_eq!(out.age_s, 0.5);
    }

    #[test]
    fn accounting_balances_after_flush() {
        let mut net = QueueNetwork::new(params(), 1);
        let d = UserDecision {
            fg_on_device: false,
            bg_render: vec![true; 5],
            bg_on_device: vec![false, true, false, true, false],
        };
        let p = profile(3e7, 5e6, 6e7);
        for k in 0..10u64 {
            net.apply_aqm(k);
            net.enqueue(0, k, &d, &p).unwrap();
            let t0 = k as f64 * 0.01;
            net.advance(&res(14e9, 1e9), t0, (k + 1) as f64 * 0.01).unwrap();
            if k >= 1 {
                net.evaluate_frame(0, k - 1, 0.5).unwrap();
            }
            let s = net.stats();
            assert_eq!(s.enqueued, s.merged + s.expired + s.dropped + net.in_flight());
        }
        net.flush();
        let s = net.stats();
        assert_eq!(net.in_flight(), 0);
        assert_eq!(s.enqueued, s.merged + s.expired + s.dropped);
    }
}
