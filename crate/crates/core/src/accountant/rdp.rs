//! Rényi accountant for the Poisson-subsampled Gaussian mechanism over
//! integer orders.

use serde::{Deserialize, Serialize};

use super::MechanismSpec;
use crate::error::{invalid, Error, Result};
use crate::special::{ln_binomial, log_sum_exp};

/// Integer orders 2..=512.
pub const DEFAULT_ORDERS: std::ops::RangeInclusive<u32> = 2..=512;

pub fn default_orders() -> Vec<u32> {
    DEFAULT_ORDERS.collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    /// ε(α) of the whole composition, one per order.
    pub values: Vec<f64>,
}

/// How a Rényi curve is turned into an (ε, δ) statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RdpConversion {
    /// ε = r(α) + log(1/δ)/(α − 1)
    Classic,
    /// ε = r(α) + log(1 − 1/α) − (log δ + log α)/(α − 1); never looser
    /// than `Classic`.
    #[default]
    Improved,
}

/// Per-step Rényi divergence bound of the subsampled Gaussian at integer
/// order `alpha`:
/// (1/(α−1))·log Σ_k C(α,k)(1−q)^{α−k} q^k exp(k(k−1)/(2σ²)).
pub fn rdp_one_step(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("sampling rate {q} outside [0, 1]")));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!(
            "noise multiplier {sigma} must be positive"
        )));
    }
    if alpha < 2 {
        return Err(invalid(format!("order {alpha} must be an integer >= 2")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = f64::from(alpha);
    if q == 1.0 {
        return Ok(a / (2.0 * sigma * sigma));
    }
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let terms: Vec<f64> = (0..=u64::from(alpha))
        .map(|k| {
            let kf = k as f64;
            ln_binomial(u64::from(alpha), k)
                + (a - kf) * ln_1mq
                + kf * ln_q
                + kf * (kf - 1.0) / (2.0 * sigma * sigma)
        })
        .collect();
    let value = log_sum_exp(&terms) / (a - 1.0);
    if !value.is_finite() {
        return Err(Error::NumericalRange(format!(
            "RDP bound overflowed at q={q}, sigma={sigma}, alpha={alpha}"
        )));
    }
    Ok(value.max(0.0))
}

/// Linear composition: T times the per-step bound at every order.
pub fn rdp_curve(spec: &MechanismSpec, orders: &[u32]) -> Result<RdpCurve> {
    spec.validate()?;
    if orders.is_empty() {
        return Err(invalid("at least one Rényi order is required"));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("orders must be strictly increasing"));
    }
    let values = orders
        .iter()
        .map(|&a| rdp_one_step(spec.q, spec.sigma, a).map(|v| v * spec.steps as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdpCurve {
        orders: orders.to_vec(),
        values,
    })
}

/// Smallest ε over the curve's orders at which the composition is
/// (ε, δ)-DP.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64, conversion: RdpConversion) -> Result<f64> {
    if curve.orders.is_empty() || curve.orders.len() != curve.values.len() {
        return Err(invalid("RDP curve is empty or malformed"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta {delta} must lie in (0, 1)")));
    }
    let ln_delta = delta.ln();
    let eps = curve
        .orders
        .iter()
        .zip(&curve.values)
        .map(|(&order, &r)| {
            let a = f64::from(order);
            match conversion {
                RdpConversion::Classic => r - ln_delta / (a - 1.0),
                RdpConversion::Improved => r + (-1.0 / a).ln_1p() - (ln_delta + a.ln()) / (a - 1.0),
            }
        })
        .fold(f64::INFINITY, f64::min);
    Ok(eps.max(0.0))
}
