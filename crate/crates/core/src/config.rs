//! Run configuration: every model constant, loaded from TOML.
//!
//! Units are SI (Hz, bits, seconds, joules) except the channel section,
//! which keeps the customary dB/dBm/degree inputs and converts on use.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{db_to_linear, dbm_to_watt, ChannelParams};
use crate::pipeline::PipelineParams;
use crate::workload::{Mobility, TraceShape, WorkloadParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config value `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub users: usize,
    /// Slots per episode `K`.
    pub horizon: usize,
    /// Episodes in a generated trace set `H`.
    pub episodes: u32,
    /// Frame rate; the slot length is `1 / fps`.
    pub fps: f64,
    pub mtp_s: f64,
    /// Age charged to a frame replaced by time warp.
    pub atw_penalty_s: f64,
    pub merge_s: f64,
    pub compress_s: f64,
    pub decompress_s: f64,
    pub room_size_m: f64,
    pub mobility: Mobility,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            users: 5,
            horizon: 300,
            episodes: 1000,
            fps: 100.0,
            mtp_s: 0.02,
            atw_penalty_s: 0.5,
            merge_s: 0.002,
            compress_s: 0.005,
            decompress_s: 0.008,
            room_size_m: 20.0,
            mobility: Mobility::Static,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceConfig {
    pub total_bandwidth_hz: f64,
    pub total_edge_gpu_hz: f64,
    pub device_gpu_hz: f64,
    /// Effective switched capacitance of the device GPU.
    pub beta: f64,
    /// Device energy per decompressed background tile.
    pub decompress_energy_j: f64,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 500e6,
            total_edge_gpu_hz: 70e9,
            device_gpu_hz: 3e9,
            beta: 1e-25,
            decompress_energy_j: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub carrier_freq_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub mainlobe_beamwidth_deg: f64,
    pub mainlobe_gain_db: f64,
    pub sidelobe_gain_db: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    pub min_distance_m: f64,
    /// Draw a new link realization every slot (block fading). When false the
    /// slot-0 draw is held for the episode.
    pub redraw_every_slot: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 28e9,
            tx_power_dbm: 30.0,
            noise_psd_dbm_per_hz: -147.0,
            mainlobe_beamwidth_deg: 30.0,
            mainlobe_gain_db: 10.0,
            sidelobe_gain_db: -10.0,
            shadow_los_db: 3.0,
            shadow_nlos_db: 8.03,
            min_distance_m: 1.0,
            redraw_every_slot: true,
        }
    }
}

impl ChannelConfig {
    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            carrier_freq_hz: self.carrier_freq_hz,
            tx_power_w: dbm_to_watt(self.tx_power_dbm),
            noise_psd_w_per_hz: dbm_to_watt(self.noise_psd_dbm_per_hz),
            mainlobe_beamwidth_rad: self.mainlobe_beamwidth_deg * PI / 180.0,
            mainlobe_gain_linear: db_to_linear(self.mainlobe_gain_db),
            sidelobe_gain_linear: db_to_linear(self.sidelobe_gain_db),
            shadow_los_db: self.shadow_los_db,
            shadow_nlos_db: self.shadow_nlos_db,
            min_distance_m: self.min_distance_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of device energy against age.
    pub zeta: f64,
    /// Reward charged per AQM-dropped tile.
    pub drop_penalty: f64,
    /// Expected cost-return limit, passed through to learners.
    pub cost_limit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            zeta: 0.1,
            drop_penalty: 1e-4,
            cost_limit: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Tiles featurized per queue (`M`).
    pub queue_features: usize,
    pub load_scale_cycles: f64,
    pub gpu_scale_hz: f64,
    /// Append the per-queue drop counts to the observation.
    pub include_aqm_state: bool,
    /// Charge `drop_penalty` per dropped tile.
    pub include_drop_penalty: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            queue_features: 8,
            load_scale_cycles: 1e8,
            gpu_scale_hz: 1e9,
            include_aqm_state: true,
            include_drop_penalty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AqmConfig {
    /// Include the compression time in the compression-queue threshold.
    pub strict_compress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub resources: ResourceConfig,
    pub channel: ChannelConfig,
    pub workload: WorkloadParams,
    pub reward: RewardConfig,
    pub env: EnvConfig,
    pub aqm: AqmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            system: SystemConfig::default(),
            resources: ResourceConfig::default(),
            channel: ChannelConfig::default(),
            workload: WorkloadParams::default(),
            reward: RewardConfig::default(),
            env: EnvConfig::default(),
            aqm: AqmConfig::default(),
        }
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string()?).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let text = self.to_toml_string().expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn slot_s(&self) -> f64 {
        1.0 / self.system.fps
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        if s.users == 0 {
            return Err(invalid("system.users", "must be at least 1"));
        }
        if s.horizon == 0 {
            return Err(invalid("system.horizon", "must be at least 1"));
        }
        positive("system.fps", s.fps)?;
        positive("system.mtp_s", s.mtp_s)?;
        positive("system.atw_penalty_s", s.atw_penalty_s)?;
        positive("system.merge_s", s.merge_s)?;
        positive("system.compress_s", s.compress_s)?;
        positive("system.decompress_s", s.decompress_s)?;
        positive("system.room_size_m", s.room_size_m)?;
        if let Mobility::RandomWaypoint { speed_mps } = s.mobility {
            non_negative("system.mobility.speed_mps", speed_mps)?;
        }

        let r = &self.resources;
        positive("resources.total_bandwidth_hz", r.total_bandwidth_hz)?;
        positive("resources.total_edge_gpu_hz", r.total_edge_gpu_hz)?;
        positive("resources.device_gpu_hz", r.device_gpu_hz)?;
        non_negative("resources.beta", r.beta)?;
        non_negative("resources.decompress_energy_j", r.decompress_energy_j)?;

        let c = &self.channel;
        positive("channel.min_distance_m", c.min_distance_m)?;
        if !(c.mainlobe_beamwidth_deg > 0.0 && c.mainlobe_beamwidth_deg < 360.0) {
            return Err(invalid(
                "channel.mainlobe_beamwidth_deg",
                format!("must lie in (0, 360), got {}", c.mainlobe_beamwidth_deg),
            ));
        }
        c.params()
            .validate()
            .map_err(|e| invalid("channel", e.to_string()))?;

        self.workload
            .validate()
            .map_err(|e| invalid("workload", e.to_string()))?;

        non_negative("reward.zeta", self.reward.zeta)?;
        non_negative("reward.drop_penalty", self.reward.drop_penalty)?;
        non_negative("reward.cost_limit", self.reward.cost_limit)?;
        positive("env.load_scale_cycles", self.env.load_scale_cycles)?;
        positive("env.gpu_scale_hz", self.env.gpu_scale_hz)?;
        Ok(())
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            slot_s: self.slot_s(),
            mtp_s: self.system.mtp_s,
            merge_s: self.system.merge_s,
            compress_s: self.system.compress_s,
            decompress_s: self.system.decompress_s,
            compressed_bg_bits: self.workload.compressed_background_bits(),
            window_len: self.workload.window_len,
            strict_compress_aqm: self.aqm.strict_compress,
        }
    }

    pub fn trace_shape(&self) -> TraceShape {
        TraceShape {
            users: self.system.users,
            horizon: self.system.horizon,
            room_size_m: self.system.room_size_m,
            slot_s: self.slot_s(),
        }
    }

    /// The base station sits at the centre of the room.
    pub fn bs_position(&self) -> (f64, f64) {
        let half = self.system.room_size_m / 2.0;
        (half, half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.slot_s(), 0.01);
        assert_eq!(c.pipeline_params(), PipelineParams::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig::default();
        c.system.mobility = Mobility::RandomWaypoint { speed_mps: 1.2 };
        c.resources.total_bandwidth_hz = 123.456e6;
        let text = c.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("seed = 9\n[resources]\ntotal_bandwidth_hz = 1e8\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.resources.total_bandwidth_hz, 1e8);
        assert_eq!(c.resources.total_edge_gpu_hz, 70e9);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_toml_str("[resources]\ntotal_bandwith_hz = 1e8\n").unwrap_err();
        assert!(err.to_string().contains("total_bandwith_hz"), "{err}");
    }

    #[test]
    fn invalid_value_names_the_key() {
        let err = RunConfig::from_toml_str("[system]\nfps = 0.0\n").unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "system.fps"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
