//! Audited lower bounds on ε from membership guesses on canaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::binomial_tail;

pub const DEFAULT_CONFIDENCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    /// r
    pub guesses_made: u64,
    /// v
    pub guesses_correct: u64,
    /// m
    pub total_canaries: u64,
    /// Significance level α.
    pub confidence: f64,
}

impl AuditOutcome {
    pub fn new(
        guesses_made: u64,
        guesses_correct: u64,
        total_canaries: u64,
        confidence: f64,
    ) -> Result<Self> {
        let o = AuditOutcome {
            guesses_made,
            guesses_correct,
            total_canaries,
            confidence,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.guesses_correct > self.guesses_made || self.guesses_made > self.total_canaries {
            return Err(invalid(format!(
                "need correct ({}) <= made ({}) <= canaries ({})",
                self.guesses_correct, self.guesses_made, self.total_canaries
            )));
        }
        if !(self.confidence > 0.0 && self.confidence <= 0.5) {
            return Err(invalid(format!(
                "confidence {} must lie in (0, 0.5]",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessResult {
    pub outcome: AuditOutcome,
    /// Equal losses straddled a guess boundary and were split by index.
    pub boundary_ties: bool,
}

/// Guesses the `k` lowest-loss canaries as members and the `k`
/// highest-loss ones as non-members. `k` defaults to ⌊m/4⌋ where m is the
/// total number of canaries. The two sets are pooled alternately
/// (member 0, non-member 0, member 1, ...) so index-order tie breaking
/// favours neither label.
pub fn guesses_from_losses(
    member_losses: &[f64],
    nonmember_losses: &[f64],
    k: Option<usize>,
    confidence: f64,
) -> Result<GuessResult> {
    if member_losses.len() != nonmember_losses.len() {
        return Err(invalid(
            "member and non-member canary sets must be equal-sized",
        ));
    }
    let (losses, labels): (Vec<f64>, Vec<bool>) = member_losses
        .iter()
        .zip(nonmember_losses)
        .flat_map(|(&a, &b)| [(a, true), (b, false)])
        .unzip();
    guesses_from_labeled(&losses, &labels, k, confidence)
}

/// As [`guesses_from_losses`] on a single pool of canaries in index order,
/// `is_member[i]` being the hidden label of canary i.
pub fn guesses_from_labeled(
    losses: &[f64],
    is_member: &[bool],
    k: Option<usize>,
    confidence: f64,
) -> Result<GuessResult> {
    let m = losses.len();
    let members = is_member.iter().filter(|x| **x).count();
    if is_member.len() != m || m == 0 || 2 * members != m {
        return Err(invalid(
            "canaries must be non-empty with equally many members and non-members",
        ));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(invalid("canary losses must be finite"));
    }
    let k = k.unwrap_or(m / 4);
    if k > members {
        return Err(invalid(format!(
            "k = {k} exceeds the {members} canaries per side"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| losses[i].total_cmp(&losses[j]));

    let low_correct = order[..k].iter().filter(|&&i| is_member[i]).count();
    let high_correct = order[m - k..].iter().filter(|&&i| !is_member[i]).count();
    let at = |p: usize| losses[order[p]];
    let boundary_ties = k > 0 && (at(k - 1) == at(k) || at(m - k - 1) == at(m - k));

    let outcome = AuditOutcome::new(
        2 * k as u64,
        (low_correct + high_correct) as u64,
        m as u64,
        confidence,
    )?;
    Ok(GuessResult {
        outcome,
        boundary_ties,
    })
}

/// Probability that a single guess is correct under ε-DP.
pub fn guess_probability(epsilon: f64) -> f64 {
    1.0 / (1.0 + (-epsilon).exp())
}

/// Smallest ε not rejected at level α: the root of
/// P[Binomial(r, e^ε/(1+e^ε)) ≥ v] = α, found by bisection. Zero when the
/// outcome is consistent with ε = 0 (chance-level or worse guessing).
pub fn epsilon_hat(outcome: &AuditOutcome) -> Result<f64> {
    outcome.validate()?;
    let (r, v, alpha) = (
        outcome.guesses_made,
        outcome.guesses_correct,
        outcome.confidence,
    );
    let tail = |eps: f64| binomial_tail(r, guess_probability(eps), v);
    if r == 0 || tail(0.0) >= alpha {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while tail(hi) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The rejected side of the boundary keeps the bound conservative.
    Ok(lo)
}

/// Fraction of simulated audits with ε̂ ≤ ε when each of `r` guesses is
/// independently correct with probability e^ε/(1+e^ε).
pub fn simulate_audits(
    epsilon: f64,
    r: u64,
    confidence: f64,
    audits: usize,
    seed: u64,
) -> Result<f64> {
    if audits == 0 || r == 0 {
        return Err(invalid("simulation needs at least one audit and one guess"));
    }
    // ε̂ only depends on v, so tabulate it once.
    let table: Vec<f64> = (0..=r)
        .map(|v| epsilon_hat(&AuditOutcome::new(r, v, r, confidence)?))
        .collect::<Result<_>>()?;
    let dist = Binomial::new(r, guess_probability(epsilon)).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ok = (0..audits)
        .filter(|_| table[dist.sample(&mut rng) as usize] <= epsilon)
        .count();
    Ok(ok as f64 / audits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eh(r: u64, v: u64) -> f64 {
        epsilon_hat(&AuditOutcome::new(r, v, r, 0.05).unwrap()).unwrap()
    }

    #[test]
    fn all_correct_closed_form() {
        let p = 0.05f64.powf(0.1);
        let expect = (p / (1.0 - p)).ln();
        assert!((eh(10, 10) - expect).abs() < 1e-8);
        assert!((eh(10, 10) - 1.0517).abs() < 1e-3);
    }

    #[test]
    fn chance_level_gives_zero() {
        assert_eq!(eh(10, 5), 0.0);
        assert_eq!(eh(10, 0), 0.0);
        assert_eq!(eh(100, 50), 0.0);
    }

    #[test]
    fn monotone_in_correct_guesses_and_confidence() {
        assert!(eh(100, 90) > eh(100, 80));
        let loose = epsilon_hat(&AuditOutcome::new(100, 90, 100, 0.2).unwrap()).unwrap();
        assert!(loose >= eh(100, 90));
    }

    #[test]
    fn perfectly_separated_losses() {
        let g = guesses_from_losses(&[0.1, 0.2, 0.3, 0.4], &[1.1, 1.2, 1.3, 1.4], Some(3), 0.05)
            .unwrap();
        assert_eq!(g.outcome.guesses_made, 6);
        assert_eq!(g.outcome.guesses_correct, 6);
        assert!(!g.boundary_ties);
    }

    #[test]
    fn one_boundary_inversion_costs_two() {
        let g = guesses_from_losses(&[0.1, 0.2, 0.3, 0.6], &[0.5, 0.7, 0.8, 0.9], Some(4), 0.05)
            .unwrap();
        assert_eq!(g.outcome.guesses_made, 8);
        assert_eq!(g.outcome.guesses_correct, 6);
    }

    #[test]
    fn default_k_and_ties() {
        let g = guesses_from_losses(&[1.0; 4], &[1.0; 4], None, 0.05).unwrap();
        assert_eq!(g.outcome.guesses_made, 4);
        assert_eq!(g.outcome.total_canaries, 8);
        assert!(g.boundary_ties);
        // Alternating pool order: one right guess on each side.
        assert_eq!(g.outcome.guesses_correct, 2);
        assert!(guesses_from_losses(&[1.0; 2], &[1.0; 3], None, 0.05).is_err());
        assert!(guesses_from_losses(&[1.0; 2], &[1.0; 2], Some(3), 0.05).is_err());
    }

    #[test]
    fn rejects_invalid_outcomes() {
        assert!(AuditOutcome::new(10, 11, 20, 0.05).is_err());
        assert!(AuditOutcome::new(10, 5, 8, 0.05).is_err());
        assert!(AuditOutcome::new(10, 5, 20, 0.7).is_err());
    }
}
