//! Noise calibration: the smallest noise multiplier meeting a target
//! (ε, δ) for a given sampling rate and step count.

use serde::{Deserialize, Serialize};

use crate::accountant::rdp::default_orders;
use crate::accountant::{MechanismSpec, PldOptions, PrivacyParams, RdpConversion};
use crate::error::{invalid, Error, Result};

/// Outer limits of the σ search.
const SIGMA_FLOOR: f64 = 1e-6;
const SIGMA_CEIL: f64 = 1e6;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountantKind {
    Pld,
    Rdp,
}

impl std::str::FromStr for AccountantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pld" | "prv" => Ok(AccountantKind::Pld),
            "rdp" => Ok(AccountantKind::Rdp),
            other => Err(invalid(format!(
                "unknown accountant '{other}' (expected pld or rdp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRequest {
    pub n: u64,
    pub b: u64,
    pub steps: u64,
    pub target: PrivacyParams,
    pub accountant: AccountantKind,
    /// Relative tolerance on ε at the returned σ.
    pub tolerance: f64,
}

impl CalibrationRequest {
    pub fn new(
        n: u64,
        b: u64,
        steps: u64,
        target: PrivacyParams,
        accountant: AccountantKind,
    ) -> Self {
        CalibrationRequest {
            n,
            b,
            steps,
            target,
            accountant,
            tolerance: 1e-4,
        }
    }

    pub fn q(&self) -> f64 {
        self.b as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.b > self.n {
            return Err(invalid(format!(
                "batch size {} must lie in [1, n={}]",
                self.b, self.n
            )));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        PrivacyParams::new(self.target.epsilon, self.target.delta)?;
        if !(self.tolerance > 0.0 && self.tolerance < 0.01) {
            return Err(invalid(format!(
                "tolerance {} must lie in (0, 0.01)",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Accountant settings used during calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountantSettings {
    pub pld: PldOptions,
    pub orders: Vec<u32>,
    pub conversion: RdpConversion,
}

impl Default for AccountantSettings {
    fn default() -> Self {
        AccountantSettings {
            pld: PldOptions::default(),
            orders: default_orders(),
            conversion: RdpConversion::Improved,
        }
    }
}

impl AccountantSettings {
    pub fn epsilon(&self, kind: AccountantKind, spec: &MechanismSpec, delta: f64) -> Result<f64> {
        match kind {
            AccountantKind::Pld => spec.epsilon_pld(delta, &self.pld),
            AccountantKind::Rdp => spec.epsilon_rdp(delta, &self.orders, self.conversion),
        }
    }
}

/// The δ convention `n^{-1.1}`.
pub fn default_delta(n: u64) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("dataset size {n} must be at least 2")));
    }
    Ok((n as f64).powf(-1.1))
}

pub fn calibrate_sigma(req: &CalibrationRequest) -> Result<f64> {
    calibrate_sigma_with(req, &AccountantSettings::default())
}

pub fn calibrate_sigma_with(
    req: &CalibrationRequest,
    settings: &AccountantSettings,
) -> Result<f64> {
    req.validate()?;
    let q = req.q();
    let eps_at = |sigma: f64| -> Result<f64> {
        let spec = MechanismSpec::new(q, sigma, req.steps)?;
        settings.epsilon(req.accountant, &spec, req.target.delta)
    };

    let (lo, hi) = match req.accountant {
        AccountantKind::Rdp => bracket(&eps_at, req.target.epsilon, 1e-2, 1e2)?,
        AccountantKind::Pld => {
            // Seed from the RDP answer, which upper-bounds the PLD one
            // closely; evaluating the PLD at extreme σ would need an
            // unbounded grid.
            let mut rdp_req = *req;
            rdp_req.accountant = AccountantKind::Rdp;
            rdp_req.tolerance = 1e-3;
            let seed = calibrate_sigma_with(&rdp_req, settings)?;
            bracket(&eps_at, req.target.epsilon, seed * 0.85, seed * 1.02)?
        }
    };
    refine(&eps_at, req.target.epsilon, req.tolerance, lo, hi)
}

struct Point {
    sigma: f64,
    eps: f64,
}

/// Widens `[lo, hi]` geometrically until ε(lo) > target ≥ ε(hi).
fn bracket(
    eps_at: &dyn Fn(f64) -> Result<f64>,
    target: f64,
    lo: f64,
    hi: f64,
) -> Result<(Point, Point)> {
    let mut hi = Point {
        sigma: hi,
        eps: eps_at(hi)?,
    };
    while hi.eps > target {
        let next = hi.sigma * 2.0;
        if next > SIGMA_CEIL {
            return Err(Error::Calibration(format!(
                "epsilon {} still above target {target} at sigma {}",
                hi.eps, hi.sigma
            )));
        }
        hi = Point {
            sigma: next,
            eps: eps_at(next)?,
        };
    }
    let mut lo = Point {
        sigma: lo.min(hi.sigma),
        eps: eps_at(lo.min(hi.sigma))?,
    };
    while lo.eps <= target {
        // Everything above lo already meets the target; tighten hi for free.
        hi = Point {
            sigma: lo.sigma,
            eps: lo.eps,
        };
        let next = lo.sigma / 2.0;
        if next < SIGMA_FLOOR {
            return Err(Error::Calibration(format!(
                "target {target} met even at sigma {}; the mechanism is not constrained",
                lo.sigma
            )));
        }
        lo = Point {
            sigma: next,
            eps: eps_at(next)?,
        };
    }
    Ok((lo, hi))
}

/// Bracketed root refinement of ε(σ) = target in (log σ, log ε) with the
/// Illinois variant of false position. The bracket always straddles the
/// root, so the answer satisfies ε(σ) ≤ target.
fn refine(
    eps_at: &dyn Fn(f64) -> Result<f64>,
    target: f64,
    tolerance: f64,
    mut lo: Point,
    mut hi: Point,
) -> Result<f64> {
    let t = target.ln();
    let f = |p: &Point| p.eps.max(1e-300).ln() - t;
    let (mut f_lo, mut f_hi) = (f(&lo), f(&hi));
    let mut last_side = 0i8;
    for _ in 0..MAX_ITERATIONS {
        if hi.eps >= target * (1.0 - tolerance) || hi.sigma / lo.sigma - 1.0 < tolerance * 1e-3 {
            return Ok(hi.sigma);
        }
        let (a, b) = (lo.sigma.ln(), hi.sigma.ln());
        let mut x = if f_lo.is_finite() && f_hi.is_finite() && f_lo != f_hi {
            b - f_hi * (b - a) / (f_hi - f_lo)
        } else {
            0.5 * (a + b)
        };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        // Stay a hair inside the bracket so it always shrinks.
        let margin = 1e-3 * (b - a);
        x = x.clamp(a + margin, b - margin);
        let sigma = x.exp();
        let p = Point {
            sigma,
            eps: eps_at(sigma)?,
        };
        let fp = f(&p);
        if p.eps > target {
            lo = p;
            f_lo = fp;
            if last_side == -1 {
                f_hi *= 0.5;
            }
            last_side = -1;
        } else {
            hi = p;
            f_hi = fp;
            if last_side == 1 {
                f_lo *= 0.5;
            }
            last_side = 1;
        }
    }
    Err(Error::Calibration(format!(
        "no convergence after {MAX_ITERATIONS} iterations (bracket [{}, {}])",
        lo.sigma, hi.sigma
    )))
}
