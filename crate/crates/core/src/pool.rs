//! Per-seed result records, their JSON-lines file format, and aggregation
//! into a [`Pool`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::configs::{Config, Pool, ScoredConfig};
use crate::error::{invalid, Error, Result};

/// One line of a pool file: a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRecord {
    pub b: u64,
    #[serde(rename = "T")]
    pub steps: u64,
    pub eta: f64,
    pub c: f64,
    pub seed: u64,
    /// Test loss.
    pub utility: f64,
    /// One empirical privacy value per secret.
    pub scores: Vec<f64>,
}

impl PoolRecord {
    pub fn config(&self) -> Config {
        Config {
            b: self.b,
            steps: self.steps,
            eta: self.eta,
            clip: self.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config().validate()?;
        if self.scores.is_empty() {
            return Err(invalid("scores must be non-empty"));
        }
        if !self.utility.is_finite() || self.scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("utility and scores must be finite"));
        }
        Ok(())
    }
}

/// How the per-secret scores of one run collapse to a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreAgg {
    #[default]
    Mean,
    Max,
}

impl ScoreAgg {
    pub fn apply(self, scores: &[f64]) -> f64 {
        match self {
            ScoreAgg::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            ScoreAgg::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl std::str::FromStr for ScoreAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ScoreAgg::Mean),
            "max" => Ok(ScoreAgg::Max),
            other => Err(invalid(format!("unknown score aggregation '{other}'"))),
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<PoolRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoolRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.validate()
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[PoolRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn read_records(path: &Path) -> Result<Vec<PoolRecord>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn write_records(path: &Path, records: &[PoolRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records))?;
    Ok(())
}

fn mean_std(xs: &[f64], population: bool) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let denom = if population { n } else { n - 1.0 };
    (mean, (ss / denom).sqrt())
}

/// Groups runs by (b, T, η) in order of first appearance and summarizes
/// each group across seeds. Standard deviations are sample (n − 1) unless
/// `population_std` is set.
pub fn aggregate(records: &[PoolRecord], agg: ScoreAgg, population_std: bool) -> Result<Pool> {
    struct Group {
        config: Config,
        seeds: Vec<u64>,
        utilities: Vec<f64>,
        scores: Vec<f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for r in records {
        r.validate()?;
        let cfg = r.config();
        let found = groups.iter_mut().find(|g| {
            g.config.b == cfg.b && g.config.steps == cfg.steps && g.config.eta == cfg.eta
        });
        match found {
            Some(g) => {
                if g.config.clip != cfg.clip {
                    return Err(Error::Validation(format!(
                        "configuration (b={}, T={}, eta={}) recorded with clipping norms {} and {}",
                        cfg.b, cfg.steps, cfg.eta, g.config.clip, cfg.clip
                    )));
                }
                if g.seeds.contains(&r.seed) {
                    return Err(Error::Validation(format!(
                        "duplicate record for (b={}, T={}, eta={}) with seed {}",
                        cfg.b, cfg.steps, cfg.eta, r.seed
                    )));
                }
                g.seeds.push(r.seed);
                g.utilities.push(r.utility);
                g.scores.push(agg.apply(&r.scores));
            }
            None => groups.push(Group {
                config: cfg,
                seeds: vec![r.seed],
                utilities: vec![r.utility],
                scores: vec![agg.apply(&r.scores)],
            }),
        }
    }
    let entries = groups
        .into_iter()
        .map(|g| {
            let (utility_mean, utility_std) = mean_std(&g.utilities, population_std);
            let (score_mean, score_std) = mean_std(&g.scores, population_std);
            ScoredConfig {
                config: g.config,
                utility_mean,
                utility_std,
                score_mean,
                score_std,
                seeds: g.seeds.len(),
            }
        })
        .collect();
    Pool::new(entries)
}

pub fn ingest_pool(path: &Path, agg: ScoreAgg, population_std: bool) -> Result<Pool> {
    aggregate(&read_records(path)?, agg, population_std)
}
