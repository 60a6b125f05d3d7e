//! Synthetic channel impulse responses, first-arriving-path extraction and
//! the power-threshold LoS/NLoS test.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raypath::{Mechanism, Mpc};
use crate::scene::{FrequencyBand, FrequencyRange};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Per-wall attenuation keyed by frequency range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallLoss {
    #[serde(rename = "FR1")]
    pub fr1: f64,
    #[serde(rename = "FR2")]
    pub fr2: f64,
    #[serde(rename = "FR3")]
    pub fr3: f64,
}

impl WallLoss {
    pub fn get(&self, range: FrequencyRange) -> f64 {
        match range {
            FrequencyRange::Fr1 => self.fr1,
            FrequencyRange::Fr2 => self.fr2,
            FrequencyRange::Fr3 => self.fr3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffuseParams {
    pub mean_count: f64,
    pub mean_excess_delay_s: f64,
    pub loss_spread_db: f64,
}

impl Default for DiffuseParams {
    fn default() -> Self {
        Self { mean_count: 4.0, mean_excess_delay_s: 20e-9, loss_spread_db: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub wall_loss_db: WallLoss,
    pub reflection_loss_db: f64,
    pub diffraction_loss_db: f64,
    /// Noise floor relative to the transmit power.
    pub noise_floor_db: f64,
    pub fap_threshold_db: f64,
    pub toa_sigma_m: f64,
    pub diffuse: DiffuseParams,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            wall_loss_db: WallLoss { fr1: 5.0, fr2: 25.0, fr3: 15.0 },
            reflection_loss_db: 7.0,
            diffraction_loss_db: 15.0,
            noise_floor_db: -120.0,
            fap_threshold_db: 20.0,
            toa_sigma_m: 0.1,
            diffuse: DiffuseParams::default(),
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        let w = self.wall_loss_db;
        let losses = [w.fr1, w.fr2, w.fr3, self.reflection_loss_db, self.diffraction_loss_db];
        if losses.iter().any(|l| !(*l >= 0.0)) {
            return Err("losses must be non-negative");
        }
        if !(self.fap_threshold_db > 0.0) {
            return Err("fap threshold must be positive");
        }
        if !(self.toa_sigma_m >= 0.0) {
            return Err("toa sigma must be non-negative");
        }
        if !self.noise_floor_db.is_finite() {
            return Err("noise floor must be finite");
        }
        let d = self.diffuse;
        if !(d.mean_count >= 0.0 && d.mean_excess_delay_s > 0.0 && d.loss_spread_db >= 0.0) {
            return Err("invalid diffuse parameters");
        }
        Ok(())
    }

    /// Minimum tap power that counts as detected.
    pub fn detection_threshold_db(&self) -> f64 {
        self.noise_floor_db + self.fap_threshold_db
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LosLabel {
    LoS,
    NLoS,
}

impl LosLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LosLabel::LoS => "LoS",
            LosLabel::NLoS => "NLoS",
        }
    }

    /// Ground-truth label: only an unobstructed direct path is LoS.
    pub fn of_mechanism(m: &Mechanism) -> Self {
        if matches!(m, Mechanism::LineOfSight) {
            LosLabel::LoS
        } else {
            LosLabel::NLoS
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CirTap {
    pub delay: f64,
    pub power_db: f64,
    pub mechanism: Mechanism,
    pub anchor_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToaMeasurement {
    pub anchor_id: String,
    pub range: f64,
    pub sigma: f64,
    pub power_db: Option<f64>,
    pub true_mechanism: Option<Mechanism>,
    pub los_label: Option<LosLabel>,
    pub edge_id: Option<String>,
}

impl ToaMeasurement {
    pub fn new(anchor_id: impl Into<String>, range: f64, sigma: f64) -> Self {
        Self {
            anchor_id: anchor_id.into(),
            range,
            sigma,
            power_db: None,
            true_mechanism: None,
            los_label: None,
            edge_id: None,
        }
    }

    pub fn with_mechanism(mut self, mechanism: Mechanism) -> Self {
        if let Mechanism::Diffraction { edge_id } = &mechanism {
            self.edge_id = Some(edge_id.clone());
        }
        self.true_mechanism = Some(mechanism);
        self
    }

    pub fn with_label(mut self, label: LosLabel) -> Self {
        self.los_label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("no tap above the detection threshold")]
    NoDetectablePath,
    #[error("both LoS and NLoS samples are required")]
    InsufficientData,
}

/// Free-space path loss in dB.
pub fn free_space_loss_db(path_length: f64, carrier_hz: f64) -> f64 {
    20.0 * libm::log10(4.0 * PI * path_length * carrier_hz / SPEED_OF_LIGHT)
}

/// Path gain (negative dB): free-space loss plus per-mechanism losses.
pub fn path_gain(mpc: &Mpc, band: &FrequencyBand, loss: &LossParams) -> f64 {
    let mut gain = -free_space_loss_db(mpc.path_length, band.carrier_hz);
    gain -= mpc.walls_crossed as f64 * loss.wall_loss_db.get(band.range);
    gain -= mpc.mechanism.reflection_order() as f64 * loss.reflection_loss_db;
    if mpc.mechanism.is_diffraction() {
        gain -= loss.diffraction_loss_db;
    }
    gain
}

/// One tap per MPC plus Poisson diffuse clutter trailing the earliest tap.
pub fn synthesize_cir<R: Rng + ?Sized>(mpcs: &[Mpc], band: &FrequencyBand, loss: &LossParams, rng: &mut R) -> Vec<CirTap> {
    let mut taps: Vec<CirTap> = mpcs
        .iter()
        .map(|m| CirTap {
            delay: m.path_length / SPEED_OF_LIGHT,
            power_db: path_gain(m, band, loss),
            mechanism: m.mechanism.clone(),
            anchor_id: m.anchor_id.clone(),
        })
        .collect();
    let earliest = taps.iter().min_by(|a, b| a.delay.total_cmp(&b.delay)).cloned();
    let d = loss.diffuse;
    if let (Some(first), true) = (earliest, d.mean_count > 0.0) {
        let count = Poisson::new(d.mean_count).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let excess = Exp::new(1.0 / d.mean_excess_delay_s).expect("positive rate");
        let hi = d.loss_spread_db.max(5.0);
        for _ in 0..count {
            let mut extra = excess.sample(rng);
            if extra <= 0.0 {
                extra = f64::MIN_POSITIVE;
            }
            let drop = if hi > 5.0 { rng.random_range(5.0..hi) } else { 5.0 };
            taps.push(CirTap {
                delay: first.delay + extra,
                power_db: first.power_db - drop,
                mechanism: Mechanism::Diffuse,
                anchor_id: first.anchor_id.clone(),
            });
        }
    }
    taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    taps
}

/// Earliest tap at or above `noise_floor + fap_threshold`.
pub fn first_arriving_tap<'a>(cir: &'a [CirTap], loss: &LossParams) -> Option<&'a CirTap> {
    let threshold = loss.detection_threshold_db();
    cir.iter()
        .filter(|t| t.power_db >= threshold)
        .min_by(|a, b| a.delay.total_cmp(&b.delay))
}

/// Range measurement from the first arriving path with Gaussian range noise.
pub fn extract_fap<R: Rng + ?Sized>(cir: &[CirTap], loss: &LossParams, rng: &mut R) -> Result<ToaMeasurement, ChannelError> {
    let tap = first_arriving_tap(cir, loss).ok_or(ChannelError::NoDetectablePath)?;
    let mut range = SPEED_OF_LIGHT * tap.delay;
    if loss.toa_sigma_m > 0.0 {
        range += Normal::new(0.0, loss.toa_sigma_m).expect("finite sigma").sample(rng);
        // ranges stay positive even for pathological noise draws
        range = range.max(1e-6);
    }
    let mut m = ToaMeasurement::new(tap.anchor_id.clone(), range, loss.toa_sigma_m).with_mechanism(tap.mechanism.clone());
    m.power_db = Some(tap.power_db);
    Ok(m)
}

/// Likelihood-ratio test under equal-variance Gaussian classes, which
/// reduces to a power threshold.
pub fn classify_los_nlos(power_db: f64, threshold_db: f64) -> LosLabel {
    if power_db >= threshold_db {
        LosLabel::LoS
    } else {
        LosLabel::NLoS
    }
}

/// Midpoint of the two class means.
pub fn calibrate_threshold(samples: &[(f64, LosLabel)]) -> Result<f64, ChannelError> {
    let mean = |label: LosLabel| {
        let (sum, n) = samples
            .iter()
            .filter(|(_, l)| *l == label)
            .fold((0.0, 0usize), |(s, n), (p, _)| (s + p, n + 1));
        (n > 0).then(|| sum / n as f64)
    };
    match (mean(LosLabel::LoS), mean(LosLabel::NLoS)) {
        (Some(los), Some(nlos)) => Ok(0.5 * (los + nlos)),
        _ => Err(ChannelError::InsufficientData),
    }
}
