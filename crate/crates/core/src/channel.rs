//! mmWave downlink model: indoor-office LOS probability and pathloss,
//! per-slot block fading with a sectorial antenna pattern, and the
//! Shannon-rate throughput seen by each user.
//!
//! Pathloss follows the 3GPP TR 38.901 InH-Office formulas. Shadowing is a
//! fixed per-state constant rather than a lognormal draw.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("bandwidth must be non-negative, got {0} Hz")]
    NegativeBandwidth(f64),
    #[error("invalid channel parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Physical link parameters, all in linear SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub carrier_freq_hz: f64,
    pub tx_power_w: f64,
    pub noise_psd_w_per_hz: f64,
    pub mainlobe_beamwidth_rad: f64,
    pub mainlobe_gain_linear: f64,
    pub sidelobe_gain_linear: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    /// Distances below this are clamped before evaluating the pathloss.
    pub min_distance_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 28e9,
            tx_power_w: dbm_to_watt(30.0),
            noise_psd_w_per_hz: dbm_to_watt(-147.0),
            mainlobe_beamwidth_rad: PI / 6.0,
            mainlobe_gain_linear: db_to_linear(10.0),
            sidelobe_gain_linear: db_to_linear(-10.0),
            shadow_los_db: 3.0,
            shadow_nlos_db: 8.03,
            min_distance_m: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("tx_power_w", self.tx_power_w),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("mainlobe_gain_linear", self.mainlobe_gain_linear),
            ("sidelobe_gain_linear", self.sidelobe_gain_linear),
            ("min_distance_m", self.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ChannelError::InvalidParam {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let phi = self.mainlobe_beamwidth_rad;
        if !(phi > 0.0 && phi < 2.0 * PI) {
            return Err(ChannelError::InvalidParam {
                name: "mainlobe_beamwidth_rad",
                reason: format!("must lie in (0, 2pi), got {phi}"),
            });
        }
        for (name, v) in [
            ("shadow_los_db", self.shadow_los_db),
            ("shadow_nlos_db", self.shadow_nlos_db),
        ] {
            if !v.is_finite() {
                return Err(ChannelError::InvalidParam {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn shadow_db(&self, los: LosState) -> f64 {
        match los {
            LosState::Los => self.shadow_los_db,
            LosState::Nlos => self.shadow_nlos_db,
        }
    }

    /// Probabilities of the three antenna-gain outcomes
    /// (main/main, main/side, side/side).
    pub fn antenna_gain_probabilities(&self) -> [f64; 3] {
        let two_pi = 2.0 * PI;
        let phi = self.mainlobe_beamwidth_rad;
        let main_main = (phi / two_pi).powi(2);
        let main_side = 2.0 * phi * (two_pi - phi) / (two_pi * two_pi);
        [main_main, main_side, 1.0 - (main_main + main_side)]
    }

    /// Antenna gain values paired with [`Self::antenna_gain_probabilities`].
    pub fn antenna_gain_outcomes(&self) -> [f64; 3] {
        let (gm, gs) = (self.mainlobe_gain_linear, self.sidelobe_gain_linear);
        [gm * gm, gm * gs, gs * gs]
    }

    /// Largest h·g any realization can reach: LOS at the clamp distance with
    /// both main lobes aligned.
    pub fn max_gain_product(&self) -> f64 {
        let pl = pathloss_db(
            self.min_distance_m,
            self.carrier_freq_hz,
            LosState::Los,
            self.shadow_los_db,
        )
        .expect("validated parameters");
        channel_gain_from_pathloss(pl) * self.antenna_gain_outcomes()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LosState {
    Los,
    Nlos,
}

/// One user's channel for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRealization {
    pub user: usize,
    pub slot: u64,
    pub distance_m: f64,
    pub los: LosState,
    pub pathloss_db: f64,
    pub channel_gain: f64,
    pub antenna_gain: f64,
}

impl LinkRealization {
    pub fn gain_product(&self) -> f64 {
        self.channel_gain * self.antenna_gain
    }
}

/// InH-Office LOS probability.
pub fn los_probability(distance_m: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    let p = if distance_m <= 5.0 {
        1.0
    } else if distance_m <= 49.0 {
        (-(distance_m - 5.0) / 70.8).exp()
    } else {
        (-(distance_m - 49.0) / 211.7).exp() * 0.54
    };
    Ok(p)
}

/// Large-scale pathloss of the InH-Office model, in dB, without shadowing.
pub fn large_scale_pathloss_db(
    distance_m: f64,
    carrier_freq_hz: f64,
    los: LosState,
) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    if !(carrier_freq_hz > 0.0) {
        return Err(ChannelError::InvalidParam {
            name: "carrier_freq_hz",
            reason: format!("must be > 0, got {carrier_freq_hz}"),
        });
    }
    let f_ghz = carrier_freq_hz / 1e9;
    let los_pl = 32.4 + 17.3 * distance_m.log10() + 20.0 * f_ghz.log10();
    Ok(match los {
        LosState::Los => los_pl,
        LosState::Nlos => {
            let nlos_pl = 17.3 + 38.3 * distance_m.log10() + 24.9 * f_ghz.log10();
            los_pl.max(nlos_pl)
        }
    })
}

/// Total pathloss: large-scale term plus the shadowing constant for the state.
pub fn pathloss_db(
    distance_m: f64,
    carrier_freq_hz: f64,
    los: LosState,
    shadow_db: f64,
) -> Result<f64, ChannelError> {
    Ok(large_scale_pathloss_db(distance_m, carrier_freq_hz, los)? + shadow_db)
}

pub fn channel_gain_from_pathloss(pathloss_db: f64) -> f64 {
    10f64.powf(-pathloss_db / 20.0)
}

pub fn sample_antenna_gain<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    let [p_mm, p_ms, _] = params.antenna_gain_probabilities();
    let [g_mm, g_ms, g_ss] = params.antenna_gain_outcomes();
    let u: f64 = rng.random();
    if u < p_mm {
        g_mm
    } else if u < p_mm + p_ms {
        g_ms
    } else {
        g_ss
    }
}

/// Draws a block-fading realization for one user and slot. The BS sits at
/// `bs_position`; distances below `min_distance_m` are clamped.
pub fn sample_link<R: Rng + ?Sized>(
    user: usize,
    slot: u64,
    position: (f64, f64),
    bs_position: (f64, f64),
    params: &ChannelParams,
    rng: &mut R,
) -> LinkRealization {
    let raw = (position.0 - bs_position.0).hypot(position.1 - bs_position.1);
    let distance_m = raw.max(params.min_distance_m);
    let p_los = los_probability(distance_m).expect("clamped distance is positive");
    let los = if rng.random::<f64>() < p_los {
        LosState::Los
    } else {
        LosState::Nlos
    };
    let pathloss_db = pathloss_db(
        distance_m,
        params.carrier_freq_hz,
        los,
        params.shadow_db(los),
    )
    .expect("validated parameters");
    let antenna_gain = sample_antenna_gain(params, rng);
    LinkRealization {
        user,
        slot,
        distance_m,
        los,
        pathloss_db,
        channel_gain: channel_gain_from_pathloss(pathloss_db),
        antenna_gain,
    }
}

/// Shannon rate `B log2(1 + P h g / (N0 B))` in bit/s. Zero bandwidth gives
/// zero rate.
pub fn rate_bps(
    bandwidth_hz: f64,
    channel_gain: f64,
    antenna_gain: f64,
    tx_power_w: f64,
    noise_psd_w_per_hz: f64,
) -> Result<f64, ChannelError> {
    if bandwidth_hz < 0.0 || bandwidth_hz.is_nan() {
        return Err(ChannelError::NegativeBandwidth(bandwidth_hz));
    }
    if bandwidth_hz == 0.0 {
        return Ok(0.0);
    }
    let snr = tx_power_w * channel_gain * antenna_gain / (noise_psd_w_per_hz * bandwidth_hz);
    Ok(bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2)
}

impl ChannelParams {
    pub fn rate_bps(&self, bandwidth_hz: f64, link: &LinkRealization) -> Result<f64, ChannelError> {
        rate_bps(
            bandwidth_hz,
            link.channel_gain,
            link.antenna_gain,
            self.tx_power_w,
            self.noise_psd_w_per_hz,
        )
    }
}
