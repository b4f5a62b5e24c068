//! Privacy profiles: the ε(δ) curve of a mechanism, and how two curves
//! calibrated to the same point order themselves on either side of it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::accountant::{pld_composed, MechanismSpec, PldOptions, PldPair};
use crate::error::{invalid, Error, Result};

/// `count` log-spaced values from `lo` to `hi` inclusive, ascending.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == count - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// 200 log-spaced deltas in [1e-10, 1e-2].
pub fn default_delta_grid() -> Vec<f64> {
    log_spaced(1e-10, 1e-2, 200)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyProfile {
    pub spec: MechanismSpec,
    /// Ascending in δ.
    pub points: Vec<ProfilePoint>,
    /// Grid points dropped because δ was at or below the accountant's
    /// infinity mass.
    #[serde(default)]
    pub dropped: usize,
}

impl PrivacyProfile {
    pub fn deltas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta).collect()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.epsilon).collect()
    }

    /// `delta,epsilon` rows under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,epsilon\n");
        for p in &self.points {
            let _ = writeln!(out, "{:e},{}", p.delta, p.epsilon);
        }
        out
    }
}

/// A composed PLD kept around so many δ queries share one composition.
#[derive(Debug, Clone)]
pub struct Profiler {
    spec: MechanismSpec,
    composed: PldPair,
}

impl Profiler {
    pub fn new(spec: MechanismSpec, opts: &PldOptions) -> Result<Self> {
        spec.validate()?;
        let composed = pld_composed(spec.q, spec.sigma, spec.steps, opts)?;
        Ok(Profiler { spec, composed })
    }

    pub fn spec(&self) -> &MechanismSpec {
        &self.spec
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        self.composed.epsilon_at_delta(delta)
    }

    pub fn delta(&self, epsilon: f64) -> f64 {
        self.composed.delta_at_epsilon(epsilon)
    }

    pub fn profile(&self, delta_grid: &[f64]) -> Result<PrivacyProfile> {
        let grid = sorted_grid(delta_grid)?;
        let mut points = Vec::with_capacity(grid.len());
        let mut dropped = 0;
        for delta in grid {
            match self.composed.epsilon_at_delta(delta) {
                Ok(epsilon) => points.push(ProfilePoint { delta, epsilon }),
                Err(Error::UnattainableDelta { .. }) => dropped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(PrivacyProfile {
            spec: self.spec,
            points,
            dropped,
        })
    }
}

fn sorted_grid(delta_grid: &[f64]) -> Result<Vec<f64>> {
    if delta_grid.is_empty() {
        return Err(invalid("delta grid is empty"));
    }
    if delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(invalid("every grid delta must lie in (0, 1)"));
    }
    let mut grid = delta_grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    Ok(grid)
}

/// ε(δ) at every grid point under the PLD accountant. Points the
/// discretization cannot certify are counted in `dropped`.
pub fn compute_profile(
    spec: &MechanismSpec,
    delta_grid: &[f64],
    opts: &PldOptions,
) -> Result<PrivacyProfile> {
    Profiler::new(*spec, opts)?.profile(delta_grid)
}

/// Reference profile of the *unsubsampled* Gaussian composed `steps` times,
/// from ε(α) = Tα/(2σ²) with the classic conversion minimized over all real
/// orders α > 1. The minimizer is α* = 1 + √(log(1/δ)/c) with c = T/(2σ²),
/// giving ε = c + 2√(c·log(1/δ)). Depends on (σ, T) only through T/σ².
pub fn closed_form_profile(sigma: f64, steps: u64, delta_grid: &[f64]) -> Result<PrivacyProfile> {
    let spec = MechanismSpec::new(1.0, sigma, steps)?;
    let c = steps as f64 / (2.0 * sigma * sigma);
    let points = sorted_grid(delta_grid)?
        .into_iter()
        .map(|delta| {
            let log_inv = -delta.ln();
            ProfilePoint {
                delta,
                epsilon: c + 2.0 * (c * log_inv).sqrt(),
            }
        })
        .collect();
    Ok(PrivacyProfile {
        spec,
        points,
        dropped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaInterval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub deltas: Vec<f64>,
    /// Sign of ε_a − ε_b per grid point (−1, 0, 1).
    pub signs: Vec<i8>,
    /// Grid intervals across which the sign flips. Zero points are skipped
    /// over, so `+ 0 −` is one crossing spanning both gaps.
    pub crossings: Vec<DeltaInterval>,
    /// Sign of ε_a − ε_b at the smallest grid δ.
    pub order_at_smallest_delta: i8,
    pub order_at_largest_delta: i8,
}

/// Differences at or below this are treated as ties.
const TIE_TOLERANCE: f64 = 1e-12;

pub fn crossing_report(a: &PrivacyProfile, b: &PrivacyProfile) -> Result<CrossingReport> {
    if a.points.is_empty() || a.points.len() != b.points.len() {
        return Err(invalid(format!(
            "profiles have {} and {} points; they must share one delta grid",
            a.points.len(),
            b.points.len()
        )));
    }
    for (p, q) in a.points.iter().zip(&b.points) {
        if (p.delta - q.delta).abs() > 1e-12 * p.delta.max(q.delta) {
            return Err(invalid(format!(
                "profiles are on different delta grids ({:e} vs {:e})",
                p.delta, q.delta
            )));
        }
    }
    let signs: Vec<i8> = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| {
            let d = p.epsilon - q.epsilon;
            if d.abs() <= TIE_TOLERANCE {
                0
            } else if d > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    let deltas = a.deltas();
    let mut crossings = Vec::new();
    let mut last: Option<(usize, i8)> = None;
    for (i, &s) in signs.iter().enumerate() {
        if s == 0 {
            continue;
        }
        if let Some((j, t)) = last {
            if t != s {
                crossings.push(DeltaInterval {
                    lower: deltas[j],
                    upper: deltas[i],
                });
            }
        }
        last = Some((i, s));
    }
    Ok(CrossingReport {
        order_at_smallest_delta: signs[0],
        order_at_largest_delta: *signs.last().expect("non-empty"),
        deltas,
        signs,
        crossings,
    })
}
