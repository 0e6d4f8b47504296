//! Throughput-to-MOS mapping, power dissipation and energy efficiency.

use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, dbw_to_watts};

/// `Q = clamp(λ·log₁₀(τ·R), q_min, q_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosParams {
    pub lambda: f64,
    pub tau: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl MosParams {
    pub fn new(lambda: f64, tau: f64, q_min: f64, q_max: f64) -> Result<Self> {
        if !(lambda > 0.0 && tau > 0.0 && q_min < q_max) {
            return Err(Error::Domain(format!(
                "invalid MOS parameters (lambda={lambda}, tau={tau}, q=[{q_min}, {q_max}])"
            )));
        }
        Ok(Self { lambda, tau, q_min, q_max })
    }

    /// Chooses λ and τ so that `mos(r_min) = q_min` and `mos(r_max) = q_max`.
    pub fn calibrated(r_min: f64, r_max: f64, q_min: f64, q_max: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::Domain(format!("need 0 < r_min < r_max, got [{r_min}, {r_max}]")));
        }
        if !(q_min > 0.0 && q_max > q_min) {
            return Err(Error::Domain(format!("need 0 < q_min < q_max, got [{q_min}, {q_max}]")));
        }
        let lambda = (q_max - q_min) / (r_max / r_min).log10();
        let tau = 10f64.powf(q_min / lambda) / r_min;
        Self::new(lambda, tau, q_min, q_max)
    }
}

/// MOS of a user served at `rate` bits/s. Non-positive rates floor at `q_min`.
pub fn mos(rate: f64, p: &MosParams) -> f64 {
    if !(rate > 0.0) {
        return p.q_min;
    }
    (p.lambda * (p.tau * rate).log10()).clamp(p.q_min, p.q_max)
}

/// Hardware and transmit power constants in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    /// Per-device hardware dissipation.
    pub p_mu: f64,
    /// BS hardware dissipation.
    pub p_bs: f64,
    /// Per-varactor dissipation.
    pub p_n: f64,
    /// BS transmit cap.
    pub p_max: f64,
}

impl Default for PowerModel {
    /// P_MU = 10 dBm, P_BS = 9 dBW, P_n = 0.25 W, P_max = 20 dBm.
    fn default() -> Self {
        Self {
            p_mu: dbm_to_watts(10.0),
            p_bs: dbw_to_watts(9.0),
            p_n: 0.25,
            p_max: dbm_to_watts(20.0),
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_mu", self.p_mu), ("p_bs", self.p_bs), ("p_n", self.p_n), ("p_max", self.p_max)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `Σ‖w‖² + K·P_MU + P_BS + N·P_n`.
pub fn total_power(beam_power: f64, users: usize, elements: usize, pm: &PowerModel) -> f64 {
    beam_power + users as f64 * pm.p_mu + pm.p_bs + elements as f64 * pm.p_n
}

/// Sum MOS per watt of dissipated power (MOS/Joule per slot).
pub fn energy_efficiency(sum_mos: f64, total_power: f64) -> Result<f64> {
    if !(total_power > 0.0) {
        return Err(Error::Domain(format!("total power must be positive, got {total_power}")));
    }
    Ok(sum_mos / total_power)
}

/// Reward for a step: the change in per-slot energy efficiency.
pub fn step_reward(ee_now: f64, ee_prev: f64) -> f64 {
    ee_now - ee_prev
}
