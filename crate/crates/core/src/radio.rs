//! SINR physical layer.
//!
//! All arithmetic is in linear units (milliwatts); dBm appears only at the
//! configuration boundary. Received power follows a log-distance law
//! `P / d^ν`, clamped at 1 m so a receiver never sees more than the transmit
//! power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Point;

/// Distance below which path loss is not applied.
pub const NEAR_FIELD_M: f64 = 1.0;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Constants of the IEEE 802.15.4 analytical BER expression
/// `BER = ς₁ Σ_{k=2}^{ς₂} (−1)^k exp(ς₃·SINR·(1/k − 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerConstants {
    pub scale: f64,
    pub last_term: u32,
    pub exponent: f64,
}

impl Default for BerConstants {
    fn default() -> Self {
        BerConstants {
            scale: 1.0 / 30.0,
            last_term: 16,
            exponent: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    tx_power_dbm: f64,
    tx_power_mw: f64,
    noise_dbm: f64,
    noise_mw: f64,
    nu: f64,
    kappa: f64,
    chi: f64,
    packet_bits: u32,
    ber: BerConstants,
    r_broadcast: Option<f64>,
}

impl RadioParams {
    pub fn new(
        tx_power_dbm: f64,
        noise_dbm: f64,
        nu: f64,
        kappa: f64,
        chi: f64,
        packet_bits: u32,
    ) -> Result<Self> {
        if !tx_power_dbm.is_finite() || !noise_dbm.is_finite() {
            return Err(Error::invalid("powers must be finite"));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::invalid(format!("path-loss exponent must be positive, got {nu}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("SINR threshold must be positive, got {kappa}")));
        }
        if !(chi > 0.0 && chi < 1.0) {
            return Err(Error::invalid(format!("chi must lie in (0, 1), got {chi}")));
        }
        if packet_bits == 0 {
            return Err(Error::invalid("packet must carry at least one bit"));
        }
        Ok(RadioParams {
            tx_power_dbm,
            tx_power_mw: dbm_to_mw(tx_power_dbm),
            noise_dbm,
            noise_mw: dbm_to_mw(noise_dbm),
            nu,
            kappa,
            chi,
            packet_bits,
            ber: BerConstants::default(),
            r_broadcast: None,
        })
    }

    /// Fixes the broadcast range directly instead of `χ·R_m`.
    pub fn with_broadcast_range(mut self, meters: f64) -> Result<Self> {
        if !(meters.is_finite() && meters > 0.0) {
            return Err(Error::invalid(format!("broadcast range must be positive, got {meters}")));
        }
        self.r_broadcast = Some(meters);
        Ok(self)
    }

    pub fn with_ber_constants(mut self, ber: BerConstants) -> Self {
        self.ber = ber;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("SINR threshold must be positive, got {kappa}")));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }

    pub fn tx_power_mw(&self) -> f64 {
        self.tx_power_mw
    }

    pub fn noise_dbm(&self) -> f64 {
        self.noise_dbm
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn packet_bits(&self) -> u32 {
        self.packet_bits
    }

    pub fn ber_constants(&self) -> BerConstants {
        self.ber
    }

    /// Whether the broadcast range was set explicitly.
    pub fn broadcast_range_override(&self) -> Option<f64> {
        self.r_broadcast
    }

    /// Noise-limited reception radius `(P / (κ 𝒩₀))^{1/ν}`.
    pub fn r_max(&self) -> f64 {
        (self.tx_power_mw / (self.kappa * self.noise_mw)).powf(1.0 / self.nu)
    }

    /// Broadcast range: the explicit override, else `χ·R_m`.
    pub fn r_broadcast(&self) -> f64 {
        self.r_broadcast.unwrap_or(self.chi * self.r_max())
    }

    pub(crate) fn power_at(&self, d: f64) -> f64 {
        self.tx_power_mw / d.max(NEAR_FIELD_M).powf(self.nu)
    }
}

/// Power received at distance `d`.
pub fn received_power(params: &RadioParams, d: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {d}")));
    }
    Ok(params.power_at(d))
}

/// SINR at `receiver` for a packet from `transmitter` while every position in
/// `interferers` transmits concurrently.
pub fn sinr_at(params: &RadioParams, receiver: Point, transmitter: Point, interferers: &[Point]) -> Result<f64> {
    let signal = received_power(params, receiver.distance(&transmitter)).map_err(|_| {
        Error::invalid("transmitter and receiver positions coincide")
    })?;
    let mut interference = 0.0;
    for u in interferers {
        interference += received_power(params, receiver.distance(u))
            .map_err(|_| Error::invalid("an interferer coincides with the receiver"))?;
    }
    Ok(signal / (interference + params.noise_mw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    pub ber: f64,
    pub pdr: f64,
}

/// Bit error rate and packet delivery ratio `(1 − BER)^z` at a given SINR.
pub fn link_quality(params: &RadioParams, sinr: f64) -> LinkQuality {
    let sinr = sinr.max(0.0);
    let c = params.ber;
    let mut sum = 0.0;
    for k in 2..=c.last_term {
        let term = (c.exponent * sinr * (1.0 / k as f64 - 1.0)).exp();
        sum += if k % 2 == 0 { term } else { -term };
    }
    // the truncated alternating series can leave [0, 1] for extreme inputs
    let ber = (c.scale * sum).clamp(0.0, 1.0);
    let pdr = (1.0 - ber).powi(params.packet_bits as i32);
    LinkQuality { ber, pdr }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub r_max: f64,
    pub r_broadcast: f64,
    pub r_collision: f64,
    pub r_preventing: f64,
}

/// Scheduler radii for an estimated interferer count `n_interferers`.
///
/// `R_C` is the smallest receiver-interferer distance for which `n̂` equal
/// interferers still leave a receiver on the broadcast perimeter at exactly
/// SINR `κ`.
pub fn ranges(params: &RadioParams, n_interferers: usize) -> Result<Ranges> {
    let r_max = params.r_max();
    let r_broadcast = params.r_broadcast();
    let p = params.tx_power_mw;
    let rb_nu = r_broadcast.powf(params.nu);
    let denominator = p - params.kappa * rb_nu * params.noise_mw;
    if !(denominator > 0.0) {
        return Err(Error::InfeasibleBroadcastRange(format!(
            "R_B = {r_broadcast} m is not below the noise-limited radius R_m = {r_max} m"
        )));
    }
    let r_collision = (n_interferers as f64 * params.kappa * p * rb_nu / denominator).powf(1.0 / params.nu);
    Ok(Ranges {
        r_max,
        r_broadcast,
        r_collision,
        r_preventing: r_broadcast + r_collision,
    })
}

/// Open interval for `χ` that keeps a uniform deployment connected:
/// `(ℓ_s √(ln N / (π N R_m²)), 1)`.
pub fn chi_connectivity_bound(params: &RadioParams, side_len: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::invalid(format!("connectivity bound needs n >= 2, got {n}")));
    }
    let n = n as f64;
    let r_max = params.r_max();
    let lower = side_len * (n.ln() / (std::f64::consts::PI * n * r_max * r_max)).sqrt();
    Ok((lower, 1.0))
}
