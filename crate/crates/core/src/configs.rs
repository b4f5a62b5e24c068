//! Hyperparameter configurations, the three pairwise "which config leaks
//! less" heuristics, their accuracy on a scored pool, and the sequential
//! selection procedure built on them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative tolerance used when deciding that two derived quantities
/// (compute, updates, learning rate) are equal. Compared on log values.
pub const DEFAULT_GROUPING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Batch size.
    pub b: u64,
    /// Training steps.
    pub steps: u64,
    /// Learning rate.
    pub eta: f64,
    /// Clipping norm. Carried along but never compared.
    pub clip: f64,
}

impl Config {
    pub fn new(b: u64, steps: u64, eta: f64, clip: f64) -> Result<Self> {
        let c = Config {
            b,
            steps,
            eta,
            clip,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.steps == 0 {
            return Err(invalid("batch size and steps must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.clip > 0.0) {
            return Err(invalid("learning rate and clipping norm must be positive"));
        }
        Ok(())
    }

    /// C = b·T
    pub fn compute(&self) -> f64 {
        self.b as f64 * self.steps as f64
    }

    /// U = C·η
    pub fn updates(&self) -> f64 {
        self.compute() * self.eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredConfig {
    pub config: Config,
    /// Test loss across seeds; lower is better utility.
    pub utility_mean: f64,
    pub utility_std: f64,
    /// Empirical privacy score across seeds; higher is worse privacy.
    pub score_mean: f64,
    pub score_std: f64,
    pub seeds: usize,
}

impl ScoredConfig {
    /// A single-seed entry.
    pub fn point(config: Config, utility: f64, score: f64) -> Self {
        ScoredConfig {
            config,
            utility_mean: utility,
            utility_std: 0.0,
            score_mean: score,
            score_std: 0.0,
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub entries: Vec<ScoredConfig>,
}

impl Pool {
    pub fn new(entries: Vec<ScoredConfig>) -> Result<Self> {
        let pool = Pool { entries };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.entries.iter().enumerate() {
            a.config.validate()?;
            if a.seeds == 0 || a.utility_std < 0.0 || a.score_std < 0.0 {
                return Err(invalid(format!("entry {i} has invalid seed statistics")));
            }
            for b in &self.entries[i + 1..] {
                if a.config.b == b.config.b
                    && a.config.steps == b.config.steps
                    && a.config.eta == b.config.eta
                {
                    return Err(invalid(format!(
                        "configuration (b={}, T={}, eta={}) appears twice",
                        a.config.b, a.config.steps, a.config.eta
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Which side of a pair a heuristic predicts to have better empirical
/// privacy (a lower score).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::First => Side::Second,
            Side::Second => Side::First,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicKind {
    /// Smaller b, T and η, at least one strictly.
    Individual,
    /// Equal compute and learning rate: larger batch wins.
    Compute,
    /// Equal updates: smaller learning rate wins.
    Updates,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [
        HeuristicKind::Individual,
        HeuristicKind::Compute,
        HeuristicKind::Updates,
    ];

    pub fn compare(self, a: &Config, b: &Config) -> Option<Side> {
        match self {
            HeuristicKind::Individual => compare_individual(a, b),
            HeuristicKind::Compute => compare_compute(a, b),
            HeuristicKind::Updates => compare_updates(a, b),
        }
    }
}

impl std::str::FromStr for HeuristicKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(HeuristicKind::Individual),
            "compute" => Ok(HeuristicKind::Compute),
            "updates" => Ok(HeuristicKind::Updates),
            other => Err(invalid(format!("unknown heuristic '{other}'"))),
        }
    }
}

/// `x == y` up to `tol` on the log scale. Both arguments must be positive.
pub fn approx_eq(x: f64, y: f64, tol: f64) -> bool {
    (x.ln() - y.ln()).abs() <= tol
}

fn cmp_tol(x: f64, y: f64, tol: f64) -> Ordering {
    if approx_eq(x, y, tol) {
        Ordering::Equal
    } else {
        x.total_cmp(&y)
    }
}

/// `a` dominates `b` when it is no larger in every individual
/// hyperparameter and strictly smaller in at least one.
fn dominates(a: &Config, b: &Config, tol: f64) -> bool {
    let orders = [
        a.steps.cmp(&b.steps),
        a.b.cmp(&b.b),
        cmp_tol(a.eta, b.eta, tol),
    ];
    orders.iter().all(|o| *o != Ordering::Greater) && orders.contains(&Ordering::Less)
}

pub fn compare_individual(a: &Config, b: &Config) -> Option<Side> {
    let tol = DEFAULT_GROUPING_TOLERANCE;
    if dominates(a, b, tol) {
        Some(Side::First)
    } else if dominates(b, a, tol) {
        Some(Side::Second)
    } else {
        None
    }
}

pub fn compare_compute(a: &Config, b: &Config) -> Option<Side> {
    let tol = DEFAULT_GROUPING_TOLERANCE;
    if !approx_eq(a.compute(), b.compute(), tol) || !approx_eq(a.eta, b.eta, tol) {
        return None;
    }
    match a.b.cmp(&b.b) {
        Ordering::Greater => Some(Side::First),
        Ordering::Less => Some(Side::Second),
        Ordering::Equal => None,
    }
}

pub fn compare_updates(a: &Config, b: &Config) -> Option<Side> {
    let tol = DEFAULT_GROUPING_TOLERANCE;
    if !approx_eq(a.updates(), b.updates(), tol) {
        return None;
    }
    match cmp_tol(a.eta, b.eta, tol) {
        Ordering::Less => Some(Side::First),
        Ordering::Greater => Some(Side::Second),
        Ordering::Equal => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub heuristic: HeuristicKind,
    /// Unordered pairs the heuristic made a prediction on.
    pub applicable: usize,
    pub correct: usize,
    /// `None` when no pair was applicable.
    pub accuracy: Option<f64>,
}

/// Fraction of applicable pairs where the predicted-better side has a
/// strictly smaller mean score. Score ties count as wrong.
pub fn heuristic_accuracy(pool: &Pool, heuristic: HeuristicKind) -> Result<AccuracyRecord> {
    if pool.len() < 2 {
        return Err(invalid(
            "heuristic accuracy needs at least two configurations",
        ));
    }
    let mut applicable = 0;
    let mut correct = 0;
    for (i, a) in pool.entries.iter().enumerate() {
        for b in &pool.entries[i + 1..] {
            let Some(side) = heuristic.compare(&a.config, &b.config) else {
                continue;
            };
            applicable += 1;
            let (better, worse) = match side {
                Side::First => (a, b),
                Side::Second => (b, a),
            };
            if better.score_mean < worse.score_mean {
                correct += 1;
            }
        }
    }
    let accuracy = (applicable > 0).then(|| correct as f64 / applicable as f64);
    Ok(AccuracyRecord {
        heuristic,
        applicable,
        correct,
        accuracy,
    })
}

/// Single-linkage clusters of `keys` (by index) where neighbours within
/// `tol` on the log scale share a cluster.
fn group_by_log(keys: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&i, &j| keys[i].total_cmp(&keys[j]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if approx_eq(keys[*g.last().unwrap()], keys[i], tol) => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Deterministic tie-break: ascending (η, T, b).
fn lexicographic(a: &Config, b: &Config) -> Ordering {
    a.eta
        .total_cmp(&b.eta)
        .then(a.steps.cmp(&b.steps))
        .then(a.b.cmp(&b.b))
}

/// Sequential selection:
/// 1. group by updates U, keep the smallest η in each group;
/// 2. group by (U, C), keep the largest b in each group;
/// 3. drop every point dominated on (b, T, η);
/// 4. return the survivor with the worst (largest) utility.
pub fn select_algorithm1(pool: &Pool) -> Result<ScoredConfig> {
    select_algorithm1_with(pool, DEFAULT_GROUPING_TOLERANCE)
}

pub fn select_algorithm1_with(pool: &Pool, tol: f64) -> Result<ScoredConfig> {
    let entries = &pool.entries;
    if entries.is_empty() {
        return Err(invalid("cannot select from an empty pool"));
    }

    // Step 1: updates heuristic.
    let updates: Vec<f64> = entries.iter().map(|e| e.config.updates()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for group in group_by_log(&updates, tol) {
        let min_eta = group
            .iter()
            .map(|&i| entries[i].config.eta)
            .fold(f64::INFINITY, f64::min);
        kept.extend(
            group
                .into_iter()
                .filter(|&i| approx_eq(entries[i].config.eta, min_eta, tol)),
        );
    }

    // Step 2: compute heuristic, within groups of equal (U, C).
    let mut step2: Vec<usize> = Vec::new();
    let u_kept: Vec<f64> = kept.iter().map(|&i| updates[i]).collect();
    for u_group in group_by_log(&u_kept, tol) {
        let members: Vec<usize> = u_group.into_iter().map(|k| kept[k]).collect();
        let computes: Vec<f64> = members
            .iter()
            .map(|&i| entries[i].config.compute())
            .collect();
        for c_group in group_by_log(&computes, tol) {
            let ids: Vec<usize> = c_group.into_iter().map(|k| members[k]).collect();
            let max_b = ids
                .iter()
                .map(|&i| entries[i].config.b)
                .max()
                .expect("non-empty group");
            step2.extend(ids.into_iter().filter(|&i| entries[i].config.b == max_b));
        }
    }

    // Step 3: individual heuristic.
    let survivors: Vec<usize> = step2
        .iter()
        .copied()
        .filter(|&i| {
            !step2
                .iter()
                .any(|&j| j != i && dominates(&entries[j].config, &entries[i].config, tol))
        })
        .collect();

    // Final step: worst utility.
    let chosen = survivors
        .into_iter()
        .max_by(|&i, &j| {
            entries[i]
                .utility_mean
                .total_cmp(&entries[j].utility_mean)
                // max_by keeps the last maximum; reverse so the
                // lexicographically smallest wins ties.
                .then_with(|| lexicographic(&entries[j].config, &entries[i].config))
        })
        .expect("domination is acyclic, so at least one point survives");
    Ok(entries[chosen])
}
