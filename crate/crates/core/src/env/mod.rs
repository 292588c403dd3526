//! Constrained-MDP wrapper over the queue network.
//!
//! One [`Env`] replays one trace episode at a time. The order inside a step
//! is: enqueue the slot's tiles, serve all queues for one slot, judge frames
//! whose deadline fell inside the slot, then drop expired tiles at the next
//! slot start so the returned observation already reflects them.

mod action;
mod server;

pub use action::{simplex_split, Action, Bit, RawAction};
pub use server::{handle_message, serve, Endpoint, Listener, Request, Session};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{channel_gain_from_pathloss, pathloss_db, sample_link, ChannelParams, LinkRealization, LosState};
use crate::config::RunConfig;
use crate::pipeline::{
    device_energy, DropCounts, Event, FrameOutcome, PipelineError, QueueKind, QueueNetwork, TileStats, UserResources,
};
use crate::workload::{EpisodeTrace, RequestProfile, TraceSet, WorkloadError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown episode {0}")]
    UnknownEpisode(u32),
    #[error("trace does not match config: {0}")]
    TraceMismatch(String),
    #[error("step called before reset")]
    NotReset,
    #[error("episode is done; call reset")]
    Done,
    #[error("bad action shape: {0}")]
    ActionShape(String),
    #[error("bad allocation: {0}")]
    Allocation(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Flat observation layout. Per user: channel and device GPU (2), foreground
/// load and size (2), background load and size per window slot (2L), queue
/// features (11M), then optionally the five drop counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ObservationLayout {
    pub users: usize,
    pub window: usize,
    pub queue_features: usize,
    pub include_aqm_state: bool,
}

impl ObservationLayout {
    pub fn per_user(&self) -> usize {
        4 + 2 * self.window + 11 * self.queue_features + if self.include_aqm_state { 5 } else { 0 }
    }

    pub fn dim(&self) -> usize {
        self.users * self.per_user()
    }

    /// Offset of the queue block within a user's slice.
    pub fn queue_offset(&self) -> usize {
        4 + 2 * self.window
    }

    pub fn binary_dim(&self) -> usize {
        self.users * (1 + 2 * self.window)
    }

    pub fn alloc_dim(&self) -> usize {
        2 * self.users
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub slot: u64,
    /// Age of the frame judged this step, per user.
    pub age_s: Vec<Option<f64>>,
    pub feasible: Vec<Option<bool>>,
    pub energy_j: Vec<f64>,
    /// Drop counts charged to this step, `[user][r_e, c, t, d, r_d]`.
    pub drops: DropCounts,
    pub outcomes: Vec<FrameOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `-sum(age) - zeta * sum(energy) - penalty * sum(drops)`.
pub fn compute_reward(ages_s: &[f64], energies_j: &[f64], drops: u64, zeta: f64, drop_penalty: f64) -> f64 {
    -ages_s.iter().sum::<f64>() - zeta * energies_j.iter().sum::<f64>() - drop_penalty * drops as f64
}

fn draw_links(
    config: &RunConfig,
    channel: &ChannelParams,
    trace: &EpisodeTrace,
    slot: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<LinkRealization> {
    let bs = config.bs_position();
    (0..config.system.users)
        .map(|u| {
            let r = trace.record(slot as usize, u);
            sample_link(u, slot, (r.x, r.y), bs, channel, rng)
        })
        .collect()
}

struct Episode {
    trace_id: u32,
    net: QueueNetwork,
    slot: u64,
    next_frame: u64,
    links: Vec<LinkRealization>,
    rng: ChaCha8Rng,
    pending_drops: DropCounts,
    done: bool,
}

pub struct Env {
    config: RunConfig,
    channel: ChannelParams,
    layout: ObservationLayout,
    traces: Arc<TraceSet>,
    channel_norm: f64,
    event_log: bool,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(config: RunConfig, traces: Arc<TraceSet>) -> Result<Self, EnvError> {
        let users = config.system.users;
        let window = config.workload.window_len;
        for (id, ep) in &traces.episodes {
            Self::check_trace(ep, users, config.system.horizon, window)
                .map_err(|e| EnvError::TraceMismatch(format!("episode {id}: {e}")))?;
        }
        let channel = config.channel.params();
        let los_pl = pathloss_db(
            channel.min_distance_m,
            channel.carrier_freq_hz,
            LosState::Los,
            channel.shadow_los_db,
        )
        .expect("validated channel");
        let channel_norm = channel_gain_from_pathloss(los_pl) * channel.max_gain_product();
        let layout = ObservationLayout {
            users,
            window,
            queue_features: config.env.queue_features,
            include_aqm_state: config.env.include_aqm_state,
        };
        Ok(Self {
            config,
            channel,
            layout,
            traces,
            channel_norm,
            event_log: false,
            episode: None,
        })
    }

    fn check_trace(ep: &EpisodeTrace, users: usize, horizon: usize, window: usize) -> Result<(), String> {
        if ep.users() != users {
            return Err(format!("{} users, config has {users}", ep.users()));
        }
        if ep.horizon() < horizon {
            return Err(format!("{} slots, config needs {horizon}", ep.horizon()));
        }
        if let Some(r) = ep.records().find(|r| r.bg_window.len() != window) {
            return Err(format!("window {} at slot {}, config has {window}", r.bg_window.len(), r.slot));
        }
        Ok(())
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn layout(&self) -> ObservationLayout {
        self.layout
    }

    /// Record tile transitions in subsequent episodes.
    pub fn enable_event_log(&mut self) {
        self.event_log = true;
        if let Some(ep) = self.episode.as_mut() {
            ep.net.enable_event_log();
        }
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.episode.as_mut().map(|e| e.net.take_events()).unwrap_or_default()
    }

    pub fn network(&self) -> Option<&QueueNetwork> {
        self.episode.as_ref().map(|e| &e.net)
    }

    pub fn tile_stats(&self) -> Option<TileStats> {
        self.network().map(QueueNetwork::stats)
    }

    /// Current slot of the running episode.
    pub fn slot(&self) -> Option<u64> {
        self.episode.as_ref().map(|e| e.slot)
    }

    pub fn links(&self) -> &[LinkRealization] {
        self.episode.as_ref().map_or(&[], |e| &e.links)
    }

    pub fn episode_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.traces.episodes.keys().copied()
    }


    pub fn reset(&mut self, episode: u32, seed: u64) -> Result<Vec<f64>, EnvError> {
        let trace = self.traces.episode(episode).ok_or(EnvError::UnknownEpisode(episode))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode as u64);
        let links = draw_links(&self.config, &self.channel, trace, 0, &mut rng);
        let mut net = QueueNetwork::new(self.config.pipeline_params(), self.layout.users);
        if self.event_log {
            net.enable_event_log();
        }
        let pending_drops = net.apply_aqm(0);
        self.episode = Some(Episode {
            trace_id: episode,
            net,
            slot: 0,
            next_frame: 0,
            links,
            rng,
            pending_drops,
            done: false,
        });
        Ok(self.observe())
    }

    pub fn step_raw(&mut self, raw: &RawAction) -> Result<StepResult, EnvError> {
        let r = &self.config.resources;
        let action = raw.decode(self.layout.users, self.layout.window, r.total_bandwidth_hz, r.total_edge_gpu_hz)?;
        self.step(&action)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let users = self.layout.users;
        let r = self.config.resources.clone();
        action.validate(users, self.layout.window, r.total_bandwidth_hz, r.total_edge_gpu_hz)?;
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::Done);
        }
        let trace = self.traces.episode(ep.trace_id).expect("episode exists");
        let k = ep.slot;
        let params = ep.net.params().clone();

        let mut energy_j = Vec::with_capacity(users);
        let mut resources = Vec::with_capacity(users);
        for u in 0..users {
            let profile = RequestProfile::from_record(trace.record(k as usize, u), &self.config.workload)?;
            let decision = action.decision(u);
            ep.net.enqueue(u, k, &decision, &profile)?;
            energy_j.push(device_energy(&decision, &profile, r.device_gpu_hz, r.beta, r.decompress_energy_j));
            let rate = self
                .channel
                .rate_bps(action.bandwidth_hz[u], &ep.links[u])
                .expect("validated bandwidth");
            resources.push(UserResources {
                edge_gpu_hz: action.gpu_hz[u],
                device_gpu_hz: r.device_gpu_hz,
                rate_bps: rate,
            });
        }
        ep.net.advance(&resources, params.slot_start(k), params.slot_start(k + 1))?;

        // Frames whose deadline lies in (k tau, (k + 1) tau].
        let window_end = params.slot_start(k + 1) + 1e-9;
        let mut age_s = vec![None; users];
        let mut feasible = vec![None; users];
        let mut outcomes = Vec::new();
        while ep.next_frame < self.config.system.horizon as u64 && params.frame_deadline(ep.next_frame) <= window_end {
            let f = ep.next_frame;
            for u in 0..users {
                let o = ep.net.evaluate_frame(u, f, self.config.system.atw_penalty_s)?;
                *age_s[u].get_or_insert(0.0) += o.age_s;
                feasible[u] = Some(feasible[u].unwrap_or(true) && o.rendered());
                outcomes.push(o);
            }
            ep.next_frame += 1;
        }

        let drops = std::mem::take(&mut ep.pending_drops);
        let drop_total: u64 = drops.iter().flatten().map(|&d| d as u64).sum();
        let ages: Vec<f64> = outcomes.iter().map(|o| o.age_s).collect();
        let penalty = if self.config.env.include_drop_penalty {
            self.config.reward.drop_penalty
        } else {
            0.0
        };
        let reward = compute_reward(&ages, &energy_j, drop_total, self.config.reward.zeta, penalty);
        let cost = outcomes.iter().filter(|o| !o.rendered()).count() as f64;

        ep.slot += 1;
        if ep.slot as usize >= self.config.system.horizon {
            ep.done = true;
            ep.net.flush();
            ep.pending_drops = vec![[0; 5]; users];
        } else {
            if self.config.channel.redraw_every_slot {
                ep.links = draw_links(&self.config, &self.channel, trace, ep.slot, &mut ep.rng);
            }
            ep.pending_drops = ep.net.apply_aqm(ep.slot);
        }
        let done = ep.done;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            cost,
            done,
            info: StepInfo {
                slot: k,
                age_s,
                feasible,
                energy_j,
                drops,
                outcomes,
            },
        })
    }

    /// Observation of the running episode at its current slot start.
    pub fn observe(&self) -> Vec<f64> {
        let l = self.layout;
        let mut obs = vec![0.0; l.dim()];
        let Some(ep) = self.episode.as_ref() else {
            return obs;
        };
        let trace = self.traces.episode(ep.trace_id).expect("episode exists");
        let p = ep.net.params();
        let now_slot = ep.slot;
        let d_b = self.config.workload.background_size_bits();
        let load_scale = self.config.env.load_scale_cycles;
        let rest = |frame: u64| p.remaining_at_slot(frame, now_slot) / p.mtp_s;
        for u in 0..l.users {
            let o = &mut obs[u * l.per_user()..(u + 1) * l.per_user()];
            o[0] = ep.links[u].channel_gain * ep.links[u].antenna_gain / self.channel_norm;
            o[1] = self.config.resources.device_gpu_hz / self.config.env.gpu_scale_hz;
            if !ep.done {
                let rec = trace.record(now_slot as usize, u);
                if let Ok(prof) = RequestProfile::from_record(rec, &self.config.workload) {
                    o[2] = prof.fg_load_cycles / load_scale;
                    o[3] = prof.fg_size_bits / d_b;
                    for (i, n) in prof.bg_loads_cycles.iter().enumerate() {
                        o[4 + 2 * i] = n / load_scale;
                        o[5 + 2 * i] = prof.bg_size_bits / d_b;
                    }
                }
            }
            let m = l.queue_features;
            let mut at = l.queue_offset();
            for (i, t) in ep.net.queue(u, QueueKind::EdgeRender).iter().take(m).enumerate() {
                o[at + 3 * i] = t.remaining_cycles / load_scale;
                o[at + 3 * i + 1] = t.size_bits / d_b;
                o[at + 3 * i + 2] = rest(t.frame_slot);
            }
            at += 3 * m;
            for q in [QueueKind::Compress, QueueKind::Transmit, QueueKind::Decompress, QueueKind::DeviceRender] {
                for (i, t) in ep.net.queue(u, q).iter().take(m).enumerate() {
                    o[at + 2 * i] = match q {
                        QueueKind::Transmit => t.remaining_bits / d_b,
                        QueueKind::DeviceRender => t.remaining_cycles / load_scale,
                        _ => t.size_bits / d_b,
                    };
                    o[at + 2 * i + 1] = rest(t.frame_slot);
                }
                at += 2 * m;
            }
            if l.include_aqm_state {
                for (i, d) in ep.pending_drops[u].iter().enumerate() {
                    o[at + i] = *d as f64;
                }
            }
        }
        obs
    }
}
