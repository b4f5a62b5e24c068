//! (ε, δ) accounting for T-fold compositions of the Poisson-subsampled
//! Gaussian mechanism.
//!
//! Two accountants are provided: a numerical privacy-loss-distribution
//! accountant ([`pld`]) that is tight up to its discretization, and the
//! closed-form Rényi accountant ([`rdp`]) that is cheap but loose.

pub mod pld;
pub mod rdp;

pub use pld::{
    delta_at_epsilon, epsilon_at_delta, pld_compose, pld_composed, pld_single_step, PldOptions,
    PldPair, PrivacyLossDistribution,
};
pub use rdp::{
    default_orders, rdp_curve, rdp_one_step, rdp_to_dp, RdpConversion, RdpCurve, DEFAULT_ORDERS,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::special::norm_cdf;

/// A subsampled-Gaussian DP-SGD mechanism: sampling rate `q`, noise
/// multiplier `sigma`, composed `steps` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

impl MechanismSpec {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<Self> {
        let spec = MechanismSpec { q, sigma, steps };
        spec.validate()?;
        Ok(spec)
    }

    /// Mechanism for batch size `b` drawn from a dataset of `n` records.
    pub fn from_batch(n: u64, b: u64, sigma: f64, steps: u64) -> Result<Self> {
        if n == 0 || b == 0 || b > n {
            return Err(invalid(format!("batch size {b} must lie in [1, n={n}]")));
        }
        Self::new(b as f64 / n as f64, sigma, steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(invalid(format!("sampling rate {} outside [0, 1]", self.q)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid(format!(
                "noise multiplier {} must be positive",
                self.sigma
            )));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        Ok(())
    }

    /// ε at `delta` under the PLD accountant.
    pub fn epsilon_pld(&self, delta: f64, opts: &PldOptions) -> Result<f64> {
        self.validate()?;
        let composed = pld_composed(self.q, self.sigma, self.steps, opts)?;
        epsilon_at_delta(&composed, delta)
    }

    /// ε at `delta` under the RDP accountant.
    pub fn epsilon_rdp(
        &self,
        delta: f64,
        orders: &[u32],
        conversion: RdpConversion,
    ) -> Result<f64> {
        let curve = rdp_curve(self, orders)?;
        rdp_to_dp(&curve, delta, conversion)
    }
}

/// An (ε, δ) guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!(
                "epsilon {epsilon} must be finite and >= 0"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta {delta} must lie in (0, 1)")));
        }
        Ok(PrivacyParams { epsilon, delta })
    }
}

/// Analytic δ(ε) of the (non-subsampled, single-step) Gaussian mechanism
/// with sensitivity 1 and noise multiplier `sigma`.
pub fn gaussian_delta_oracle(sigma: f64, epsilon: f64) -> f64 {
    let a = 1.0 / (2.0 * sigma);
    let d = norm_cdf(a - epsilon * sigma) - epsilon.exp() * norm_cdf(-a - epsilon * sigma);
    d.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_reference_values() {
        // Φ(0.5) − Φ(−0.5)
        assert!((gaussian_delta_oracle(1.0, 0.0) - 0.382_924_922_548_026).abs() < 1e-9);
        assert!((gaussian_delta_oracle(1.0, 1.0) - 0.12693).abs() < 1e-5);
        assert!(gaussian_delta_oracle(1.0, 40.0) < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(MechanismSpec::new(1.1, 1.0, 1).is_err());
        assert!(MechanismSpec::new(0.5, 0.0, 1).is_err());
        assert!(MechanismSpec::new(0.5, 1.0, 0).is_err());
        assert!(MechanismSpec::from_batch(10, 11, 1.0, 1).is_err());
        assert!(PrivacyParams::new(1.0, 1.0).is_err());
        assert!(PrivacyParams::new(-1.0, 0.1).is_err());
        let s = MechanismSpec::from_batch(180_000, 4096, 1.0, 10).unwrap();
        assert!((s.q - 4096.0 / 180_000.0).abs() < 1e-15);
    }
}
