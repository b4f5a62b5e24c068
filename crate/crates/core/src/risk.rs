//! Privacy-risk evaluation of selection methods under a sliding utility
//! threshold, optionally resampled over training randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configs::{select_algorithm1, Pool, ScoredConfig};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    BestUtility,
    WorstUtility,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ours,
        Method::BestUtility,
        Method::WorstUtility,
        Method::Oracle,
    ];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "ours" => Ok(Method::Ours),
            "best_utility" => Ok(Method::BestUtility),
            "worst_utility" => Ok(Method::WorstUtility),
            "oracle" => Ok(Method::Oracle),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Relative,
    Absolute,
}

impl std::str::FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" | "rel" => Ok(RiskKind::Relative),
            "absolute" | "abs" => Ok(RiskKind::Absolute),
            other => Err(invalid(format!("unknown risk kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRisk {
    pub threshold: f64,
    pub selected_score: f64,
    pub oracle_score: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleStats {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub method: Method,
    pub risk_kind: RiskKind,
    /// Thresholds of the deterministic sweep on the mean layout.
    pub per_threshold: Vec<ThresholdRisk>,
    pub mean_risk: f64,
    pub resample_stats: Option<ResampleStats>,
}

/// Entries with utility at or below `u` (lower loss is better utility).
pub fn subpool(pool: &Pool, u: f64) -> Pool {
    Pool {
        entries: pool
            .entries
            .iter()
            .filter(|e| e.utility_mean <= u)
            .copied()
            .collect(),
    }
}

fn argmin_by(entries: &[ScoredConfig], key: impl Fn(&ScoredConfig) -> f64) -> ScoredConfig {
    // First minimum wins, so results follow pool order on ties.
    *entries
        .iter()
        .reduce(|best, e| if key(e) < key(best) { e } else { best })
        .expect("caller checked non-empty")
}

pub fn select_by_method(pool: &Pool, method: Method) -> Result<ScoredConfig> {
    if pool.is_empty() {
        return Err(invalid("cannot select from an empty pool"));
    }
    Ok(match method {
        Method::Ours => select_algorithm1(pool)?,
        Method::BestUtility => argmin_by(&pool.entries, |e| e.utility_mean),
        Method::WorstUtility => argmin_by(&pool.entries, |e| -e.utility_mean),
        Method::Oracle => argmin_by(&pool.entries, |e| e.score_mean),
    })
}

fn sweep(pool: &Pool, method: Method, kind: RiskKind) -> Result<(Vec<ThresholdRisk>, f64)> {
    if pool.is_empty() {
        return Err(invalid("risk sweep needs a non-empty pool"));
    }
    let mut thresholds: Vec<f64> = pool.entries.iter().map(|e| e.utility_mean).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut rows = Vec::with_capacity(thresholds.len());
    for u in thresholds {
        let sub = subpool(pool, u);
        let selected = select_by_method(&sub, method)?.score_mean;
        let oracle = select_by_method(&sub, Method::Oracle)?.score_mean;
        let risk = match kind {
            RiskKind::Absolute => selected - oracle,
            RiskKind::Relative => {
                if !(oracle > 0.0) {
                    return Err(Error::DegenerateMetric(format!(
                        "oracle score {oracle} at threshold {u} is not positive; use the absolute risk instead"
                    )));
                }
                (selected - oracle) / oracle
            }
        };
        rows.push(ThresholdRisk {
            threshold: u,
            selected_score: selected,
            oracle_score: oracle,
            risk,
        });
    }
    let mean = rows.iter().map(|r| r.risk).sum::<f64>() / rows.len() as f64;
    Ok((rows, mean))
}

pub fn threshold_sweep(pool: &Pool, method: Method, kind: RiskKind) -> Result<RiskReport> {
    let (per_threshold, mean_risk) = sweep(pool, method, kind)?;
    Ok(RiskReport {
        method,
        risk_kind: kind,
        per_threshold,
        mean_risk,
        resample_stats: None,
    })
}

/// RNG for one trial: a fixed root seed with the trial index as stream, so
/// trials are independent of execution order.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn draw(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std > 0.0 {
        Normal::new(mean, std)
            .expect("finite positive std")
            .sample(rng)
    } else {
        mean
    }
}

/// One Gaussian resample of every entry's utility and score.
pub fn resample_pool(pool: &Pool, rng: &mut ChaCha8Rng) -> Pool {
    let entries = pool
        .entries
        .iter()
        .map(|e| {
            let utility = draw(e.utility_mean, e.utility_std, rng);
            let score = draw(e.score_mean, e.score_std, rng);
            ScoredConfig {
                utility_mean: utility,
                score_mean: score,
                ..*e
            }
        })
        .collect();
    Pool { entries }
}

pub fn monte_carlo_sweep(
    pool: &Pool,
    method: Method,
    kind: RiskKind,
    trials: usize,
    seed: u64,
) -> Result<RiskReport> {
    if trials == 0 {
        return Err(invalid("monte carlo sweep needs at least one trial"));
    }
    let mut report = threshold_sweep(pool, method, kind)?;
    let risks: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let resampled = resample_pool(pool, &mut trial_rng(seed, trial));
            sweep(&resampled, method, kind).map(|(_, r)| r)
        })
        .collect::<Result<_>>()?;
    // Welford keeps the mean exact when every trial returns the same value.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (i, r) in risks.iter().enumerate() {
        let d = r - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (r - mean);
    }
    let std = if trials > 1 {
        (m2 / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    report.resample_stats = Some(ResampleStats { mean, std, trials });
    Ok(report)
}
