//! Shared fixtures: random small scenarios, a driver for the real queue
//! network, and a 1 µs time-stepped reference simulator written without
//! reusing any library scheduling code.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vrsim::pipeline::{
    PipelineParams, QueueNetwork, TileId, Transition, UserDecision, UserResources,
};
use vrsim::workload::RequestProfile;

pub const SLOT_S: f64 = 0.01;
pub const MTP_S: f64 = 0.02;
pub const MERGE_S: f64 = 0.002;
pub const COMPRESS_S: f64 = 0.005;
pub const DECOMPRESS_S: f64 = 0.008;
pub const COMPRESSED_BITS: f64 = 2_916_679.68;
pub const WINDOW: usize = 5;
pub const ATW_S: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SlotInput {
    pub decision: UserDecision,
    pub profile: RequestProfile,
    pub resources: UserResources,
}

/// `slots[k][u]`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub users: usize,
    pub slots: Vec<Vec<SlotInput>>,
}

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.random_range(1..=2);
    let horizon = rng.random_range(5..=20);
    let slots = (0..horizon)
        .map(|_| {
            let share: f64 = rng.random_range(0.05..0.95);
            (0..users)
                .map(|u| {
                    let edge_share = if users == 1 { 1.0 } else if u == 0 { share } else { 1.0 - share };
                    let decision = UserDecision {
                        fg_on_device: rng.random_bool(0.5),
                        bg_render: (0..WINDOW).map(|_| rng.random_bool(0.3)).collect(),
                        bg_on_device: (0..WINDOW).map(|_| rng.random_bool(0.3)).collect(),
                    };
                    let profile = RequestProfile {
                        fg_load_cycles: rng.random_range(1e6..6e7),
                        fg_size_bits: rng.random_range(0.0..9e7),
                        bg_loads_cycles: (0..WINDOW).map(|_| rng.random_range(2e7..1e8)).collect(),
                        bg_size_bits: 182_292_480.0,
                    };
                    let resources = UserResources {
                        edge_gpu_hz: 70e9 * edge_share,
                        device_gpu_hz: 3e9,
                        rate_bps: rng.random_range(5e8..2e10),
                    };
                    SlotInput {
                        decision,
                        profile,
                        resources,
                    }
                })
                .collect()
        })
        .collect();
    Scenario { users, slots }
}

/// `(fg ok, bg ok, chosen sensor, age)`.
pub type FrameResult = (bool, bool, Option<u64>, f64);

/// Completion time of each tile at each stage, plus drops and frame results.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `(tile, stage) -> departure time`.
    pub departures: BTreeMap<(u64, usize), f64>,
    /// `(tile, stage)` of AQM drops.
    pub drops: Vec<(u64, usize)>,
    pub frames: BTreeMap<(usize, u64), FrameResult>,
}

fn frames_due(k: u64, next: &mut u64, horizon: u64) -> Vec<u64> {
    let mut due = Vec::new();
    while *next < horizon && *next as f64 * SLOT_S + MTP_S <= (k + 1) as f64 * SLOT_S + 1e-9 {
        due.push(*next);
        *next += 1;
    }
    due
}

/// Drives the library network through the scenario the same way the
/// environment does.
pub fn run_network(s: &Scenario) -> Trace {
    let mut net = QueueNetwork::new(PipelineParams::default(), s.users);
    net.enable_event_log();
    let mut out = Trace::default();
    let mut next = 0u64;
    let horizon = s.slots.len() as u64;
    for (k, row) in s.slots.iter().enumerate() {
        let k = k as u64;
        net.apply_aqm(k);
        for (u, inp) in row.iter().enumerate() {
            net.enqueue(u, k, &inp.decision, &inp.profile).unwrap();
        }
        let res: Vec<UserResources> = row.iter().map(|i| i.resources).collect();
        net.advance(&res, k as f64 * SLOT_S, (k + 1) as f64 * SLOT_S).unwrap();
        for f in frames_due(k, &mut next, horizon) {
            for u in 0..s.users {
                let o = net.evaluate_frame(u, f, ATW_S).unwrap();
                out.frames
                    .insert((u, f), (o.fg_feasible, o.bg_feasible, o.chosen_bg_sensor, o.age_s));
            }
        }
    }
    for e in net.events() {
        let TileId(id) = e.tile;
        match e.transition {
            Transition::Moved { from, .. } => {
                out.departures.insert((id, from.index()), e.time_s);
            }
            Transition::Dropped(q) => out.drops.push((id, q.index())),
            Transition::Enqueued(_) | Transition::Merged | Transition::Expired => {}
        }
    }
    out.drops.sort();
    out
}

// ---- reference simulator ----

const DT: f64 = 1e-6;
/// Fixed 5 ms and 8 ms stages can land exactly on a deadline.
const TIE_S: f64 = 1e-10;
const TICKS_PER_SLOT: u64 = 10_000;
const RE: usize = 0;
const C: usize = 1;
const T: usize = 2;
const D: usize = 3;
const RD: usize = 4;

#[derive(Debug, Clone)]
struct RefTile {
    id: u64,
    fg: bool,
    sensor: u64,
    frame: u64,
    work: f64,
    bits: f64,
    arrival: f64,
    done: Option<f64>,
}

fn threshold(stage: usize, fg: bool) -> f64 {
    match (stage, fg) {
        (RE, false) => MERGE_S + COMPRESS_S + DECOMPRESS_S,
        (C, _) => MERGE_S + DECOMPRESS_S,
        (T, false) => MERGE_S + DECOMPRESS_S,
        _ => MERGE_S,
    }
}

/// Serves one queue over one tick, appending `(tile, finish)` to `done`.
fn tick(queue: &mut VecDeque<RefTile>, rate: f64, t0: f64, t1: f64, done: &mut Vec<(RefTile, f64)>) {
    let mut cursor = t0;
    while let Some(head) = queue.front_mut() {
        let start = cursor.max(head.arrival);
        if start >= t1 || rate <= 0.0 {
            return;
        }
        let capacity = (t1 - start) * rate;
        if head.work <= capacity {
            let finish = start + head.work / rate;
            let tile = queue.pop_front().unwrap();
            cursor = finish;
            done.push((tile, finish));
        } else {
            head.work -= capacity;
            return;
        }
    }
}

pub fn run_reference(s: &Scenario) -> Trace {
    let users = s.users;
    let horizon = s.slots.len() as u64;
    let mut queues: Vec<[VecDeque<RefTile>; 5]> = (0..users).map(|_| Default::default()).collect();
    let mut pool: Vec<Vec<RefTile>> = vec![Vec::new(); users];
    let mut out = Trace::default();
    let mut next_id = 0u64;
    let mut next_frame = 0u64;

    for k in 0..horizon {
        // Drop at slot start.
        for qs in queues.iter_mut() {
            for (stage, q) in qs.iter_mut().enumerate() {
                q.retain(|t| {
                    let rest = (t.frame as f64 - k as f64) * SLOT_S + MTP_S;
                    let keep = rest > threshold(stage, t.fg);
                    if !keep {
                        out.drops.push((t.id, stage));
                    }
                    keep
                });
            }
        }
        let origin = k as f64 * SLOT_S;
        for (u, inp) in s.slots[k as usize].iter().enumerate() {
            let d = &inp.decision;
            let fg = RefTile {
                id: next_id,
                fg: true,
                sensor: k,
                frame: k,
                work: inp.profile.fg_load_cycles,
                bits: inp.profile.fg_size_bits,
                arrival: origin,
                done: None,
            };
            next_id += 1;
            queues[u][if d.fg_on_device { RD } else { RE }].push_back(fg);
            for l in 0..WINDOW {
                if d.bg_render[l] {
                    let bg = RefTile {
                        id: next_id,
                        fg: false,
                        sensor: k,
                        frame: k + l as u64,
                        work: inp.profile.bg_loads_cycles[l],
                        bits: COMPRESSED_BITS,
                        arrival: origin,
                        done: None,
                    };
                    next_id += 1;
                    queues[u][if d.bg_on_device[l] { RD } else { RE }].push_back(bg);
                }
            }
        }

        for n in 0..TICKS_PER_SLOT {
            let t0 = (k * TICKS_PER_SLOT + n) as f64 * DT;
            let t1 = t0 + DT;
            for u in 0..users {
                let inp = &s.slots[k as usize][u];
                let qs = &mut queues[u];
                let mut done = Vec::new();

                tick(&mut qs[RE], inp.resources.edge_gpu_hz, t0, t1, &mut done);
                let mut to_t: Vec<(RefTile, f64, u8)> = Vec::new();
                for (mut tile, at) in done.drain(..) {
                    out.departures.insert((tile.id, RE), at);
                    tile.arrival = at;
                    if tile.fg {
                        tile.work = tile.bits;
                        to_t.push((tile, at, 0));
                    } else {
                        tile.work = COMPRESS_S;
                        qs[C].push_back(tile);
                    }
                }
                tick(&mut qs[C], 1.0, t0, t1, &mut done);
                for (mut tile, at) in done.drain(..) {
                    out.departures.insert((tile.id, C), at);
                    tile.arrival = at;
                    tile.work = tile.bits;
                    to_t.push((tile, at, 1));
                }
                to_t.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
                qs[T].extend(to_t.into_iter().map(|(t, _, _)| t));

                tick(&mut qs[T], inp.resources.rate_bps, t0, t1, &mut done);
                for (mut tile, at) in done.drain(..) {
                    out.departures.insert((tile.id, T), at);
                    if tile.fg {
                        tile.done = Some(at);
                        pool[u].push(tile);
                    } else {
                        tile.arrival = at;
                        tile.work = DECOMPRESS_S;
                        qs[D].push_back(tile);
                    }
                }
                tick(&mut qs[D], 1.0, t0, t1, &mut done);
                for (mut tile, at) in done.drain(..) {
                    out.departures.insert((tile.id, D), at);
                    tile.done = Some(at);
                    pool[u].push(tile);
                }
                tick(&mut qs[RD], inp.resources.device_gpu_hz, t0, t1, &mut done);
                for (mut tile, at) in done.drain(..) {
                    out.departures.insert((tile.id, RD), at);
                    tile.done = Some(at);
                    pool[u].push(tile);
                }
            }
        }

        for f in frames_due(k, &mut next_frame, horizon) {
            for u in 0..users {
                let lat = |t: &RefTile| t.done.unwrap() - t.sensor as f64 * SLOT_S + MERGE_S;
                let fg_ok = pool[u].iter().any(|t| t.fg && t.frame == f && lat(t) <= MTP_S + TIE_S);
                let chosen = pool[u]
                    .iter()
                    .filter(|t| !t.fg && t.frame == f)
                    .filter(|t| lat(t) <= (f - t.sensor) as f64 * SLOT_S + MTP_S + TIE_S)
                    .map(|t| t.sensor)
                    .max();
                let age = match (fg_ok, chosen) {
                    (true, Some(c)) => (f - c) as f64 * SLOT_S,
                    _ => ATW_S,
                };
                out.frames.insert((u, f), (fg_ok, chosen.is_some(), chosen, age));
                pool[u].retain(|t| t.frame > f);
            }
        }
    }
    out.drops.sort();
    out
}

/// Compares two traces: departure times within `tol_s`, identical drop sets
/// and identical frame outcomes.
pub fn compare(a: &Trace, b: &Trace, tol_s: f64) -> Result<(), String> {
    let keys_a: Vec<_> = a.departures.keys().collect();
    let keys_b: Vec<_> = b.departures.keys().collect();
    if keys_a != keys_b {
        let only_a: Vec<_> = a.departures.keys().filter(|k| !b.departures.contains_key(k)).collect();
        let only_b: Vec<_> = b.departures.keys().filter(|k| !a.departures.contains_key(k)).collect();
        return Err(format!("departure sets differ: only left {only_a:?}, only right {only_b:?}"));
    }
    for (k, ta) in &a.departures {
        let tb = b.departures[k];
        if (ta - tb).abs() > tol_s {
            return Err(format!("tile {} stage {}: {ta} vs {tb}", k.0, k.1));
        }
    }
    if a.drops != b.drops {
        return Err(format!("drops differ: {:?} vs {:?}", a.drops, b.drops));
    }
    if a.frames != b.frames {
        for (k, fa) in &a.frames {
            if b.frames.get(k) != Some(fa) {
                return Err(format!("frame {k:?}: {fa:?} vs {:?}", b.frames.get(k)));
            }
        }
        return Err("frame sets differ".into());
    }
    Ok(())
}
