//! Numerical privacy-loss-distribution (PLD) accountant.
//!
//! A single step of the Poisson-subsampled Gaussian is dominated by the pair
//! `P = (1−q)·N(0,σ²) + q·N(1,σ²)` versus `Q = N(0,σ²)`. Each adjacency
//! direction (remove: P against Q, add: Q against P) is discretized
//! separately on a uniform loss grid with every loss rounded *up* to the next
//! grid point, so every δ(ε) reported is an upper bound on the true value.
//! Composition is FFT convolution driven by exponentiation by squaring.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{invalid, Error, Result};
use crate::special::{log_add_exp, norm_cdf, norm_quantile, norm_sf};

/// Negative round-off below this magnitude is silently zeroed after a
/// convolution. Anything more negative indicates a numerical failure.
const ROUNDOFF_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldOptions {
    /// Spacing of the loss grid.
    pub grid_step: f64,
    /// Probability budget for tails cut off by a discretization or by one
    /// convolution. Cut mass is moved to the infinity bucket.
    pub truncation_mass: f64,
    /// Largest grid (in points) any distribution may occupy.
    pub max_grid_len: usize,
}

impl Default for PldOptions {
    fn default() -> Self {
        PldOptions {
            grid_step: 1e-4,
            truncation_mass: 1e-12,
            max_grid_len: 1 << 22,
        }
    }
}

impl PldOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0) || !self.grid_step.is_finite() {
            return Err(invalid(format!(
                "grid step {} must be positive",
                self.grid_step
            )));
        }
        if !(self.truncation_mass > 0.0 && self.truncation_mass <= 1e-3) {
            return Err(invalid(format!(
                "truncation mass {} must lie in (0, 1e-3]",
                self.truncation_mass
            )));
        }
        if self.max_grid_len < 2 {
            return Err(invalid("max grid length must be at least 2"));
        }
        Ok(())
    }
}

/// Discretized privacy-loss random variable: mass `masses[i]` sits at loss
/// `(min_index + i) · grid_step`, and `infinity_mass` at +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLossDistribution {
    grid_step: f64,
    min_index: i64,
    masses: Vec<f64>,
    infinity_mass: f64,
    pessimistic: bool,
}

impl PrivacyLossDistribution {
    /// Builds a distribution from explicit grid masses.
    pub fn from_masses(
        grid_step: f64,
        min_index: i64,
        masses: Vec<f64>,
        infinity_mass: f64,
        pessimistic: bool,
    ) -> Result<Self> {
        if !(grid_step > 0.0) {
            return Err(invalid("grid step must be positive"));
        }
        if masses.is_empty() {
            return Err(invalid("a PLD needs at least one grid point"));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) || !(infinity_mass >= 0.0) {
            return Err(invalid("PLD masses must be non-negative"));
        }
        let total = masses.iter().sum::<f64>() + infinity_mass;
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("PLD total mass {total} is not 1")));
        }
        Ok(PrivacyLossDistribution {
            grid_step,
            min_index,
            masses,
            infinity_mass,
            pessimistic,
        })
    }

    /// All mass at a single loss value `index · grid_step`.
    pub fn point_mass(grid_step: f64, index: i64) -> Result<Self> {
        Self::from_masses(grid_step, index, vec![1.0], 0.0, true)
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn min_index(&self) -> i64 {
        self.min_index
    }

    pub fn min_loss(&self) -> f64 {
        self.loss_at(0)
    }

    pub fn max_loss(&self) -> f64 {
        self.loss_at(self.masses.len() - 1)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn is_pessimistic(&self) -> bool {
        self.pessimistic
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn loss_at(&self, i: usize) -> f64 {
        (self.min_index + i as i64) as f64 * self.grid_step
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.infinity_mass
    }

    /// Hockey-stick divergence `Σ_{ℓ>ε} (1 − e^{ε−ℓ})·mass(ℓ) + mass(∞)`.
    pub fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        let mut delta = 0.0;
        // Sum from the top so the small tail terms accumulate first.
        for i in (0..self.masses.len()).rev() {
            let loss = self.loss_at(i);
            if loss <= epsilon {
                break;
            }
            delta += -(epsilon - loss).exp_m1() * self.masses[i];
        }
        (delta + self.infinity_mass).clamp(0.0, 1.0)
    }

    /// Smallest ε ≥ 0 with δ(ε) ≤ `delta`.
    ///
    /// Between consecutive grid points the set of losses exceeding ε is
    /// fixed, so δ(ε) = A − e^ε·B there and the crossing is solved in closed
    /// form rather than by bisection.
    pub fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        if !(delta < 1.0) {
            return Err(invalid(format!("delta {delta} must be below 1")));
        }
        if delta <= self.infinity_mass {
            return Err(Error::UnattainableDelta {
                delta,
                infinity_mass: self.infinity_mass,
            });
        }
        if self.delta_at_epsilon(0.0) <= delta {
            return Ok(0.0);
        }
        // Walk down from the top keeping suffix sums over losses > current
        // grid point: tail_mass = Σ m, tail_weighted = Σ m·e^{−ℓ}.
        let mut tail_mass = 0.0;
        let mut tail_weighted = 0.0;
        for i in (0..self.masses.len()).rev() {
            let loss = self.loss_at(i);
            let lower = if i == 0 {
                0.0
            } else {
                self.loss_at(i - 1).max(0.0)
            };
            tail_mass += self.masses[i];
            tail_weighted += self.masses[i] * (-loss).exp();
            // On (lower, loss] the active set is {i, i+1, ...}.
            let delta_at_lower = self.infinity_mass + tail_mass - lower.exp() * tail_weighted;
            if delta_at_lower > delta || lower <= 0.0 {
                let excess = self.infinity_mass + tail_mass - delta;
                let eps = if tail_weighted > 0.0 && excess > 0.0 {
                    (excess / tail_weighted).ln()
                } else {
                    lower
                };
                return Ok(eps.clamp(lower, loss).max(0.0));
            }
        }
        Ok(0.0)
    }

    fn trimmed(mut self, budget_per_side: f64) -> Self {
        let mut lo = 0;
        let mut cut_lo = 0.0;
        while lo + 1 < self.masses.len() && cut_lo + self.masses[lo] <= budget_per_side {
            cut_lo += self.masses[lo];
            lo += 1;
        }
        let mut hi = self.masses.len();
        let mut cut_hi = 0.0;
        while hi > lo + 1 && cut_hi + self.masses[hi - 1] <= budget_per_side {
            cut_hi += self.masses[hi - 1];
            hi -= 1;
        }
        if lo > 0 || hi < self.masses.len() {
            self.masses.truncate(hi);
            self.masses.drain(..lo);
            self.min_index += lo as i64;
            self.infinity_mass += cut_lo + cut_hi;
        }
        self
    }
}

/// The two adjacency directions of one mechanism. Queries report the worse
/// of the two.
#[derive(Debug, Clone, PartialEq)]
pub struct PldPair {
    /// Loss of P against Q with x ~ P (a record removed).
    pub remove: PrivacyLossDistribution,
    /// Loss of Q against P with x ~ Q (a record added).
    pub add: PrivacyLossDistribution,
}

impl PldPair {
    pub fn compose(&self, steps: u64, opts: &PldOptions) -> Result<PldPair> {
        Ok(PldPair {
            remove: pld_compose(&self.remove, steps, opts)?,
            add: pld_compose(&self.add, steps, opts)?,
        })
    }

    pub fn infinity_mass(&self) -> f64 {
        self.remove.infinity_mass.max(self.add.infinity_mass)
    }

    pub fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        self.remove
            .delta_at_epsilon(epsilon)
            .max(self.add.delta_at_epsilon(epsilon))
    }

    pub fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        Ok(self
            .remove
            .epsilon_at_delta(delta)?
            .max(self.add.epsilon_at_delta(delta)?))
    }
}

/// Anything that answers hockey-stick queries.
pub trait HockeyStick {
    fn delta_at_epsilon(&self, epsilon: f64) -> f64;
    fn epsilon_at_delta(&self, delta: f64) -> Result<f64>;
    fn infinity_mass(&self) -> f64;
}

impl HockeyStick for PrivacyLossDistribution {
    fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        PrivacyLossDistribution::delta_at_epsilon(self, epsilon)
    }
    fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        PrivacyLossDistribution::epsilon_at_delta(self, delta)
    }
    fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }
}

impl HockeyStick for PldPair {
    fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        PldPair::delta_at_epsilon(self, epsilon)
    }
    fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        PldPair::epsilon_at_delta(self, delta)
    }
    fn infinity_mass(&self) -> f64 {
        PldPair::infinity_mass(self)
    }
}

pub fn delta_at_epsilon<H: HockeyStick + ?Sized>(pld: &H, epsilon: f64) -> f64 {
    pld.delta_at_epsilon(epsilon)
}

pub fn epsilon_at_delta<H: HockeyStick + ?Sized>(pld: &H, delta: f64) -> Result<f64> {
    pld.epsilon_at_delta(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Remove,
    Add,
}

/// Discretizes one step of the subsampled Gaussian in both directions.
pub fn pld_single_step(q: f64, sigma: f64, opts: &PldOptions) -> Result<PldPair> {
    opts.validate()?;
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("sampling rate {q} outside [0, 1]")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!(
            "noise multiplier {sigma} must be positive"
        )));
    }
    if q == 0.0 {
        let zero = PrivacyLossDistribution::point_mass(opts.grid_step, 0)?;
        return Ok(PldPair {
            remove: zero.clone(),
            add: zero,
        });
    }
    Ok(PldPair {
        remove: discretize(q, sigma, Direction::Remove, opts)?,
        add: discretize(q, sigma, Direction::Add, opts)?,
    })
}

/// T-fold composition of the subsampled Gaussian. The discretization tails
/// get `truncation_mass / steps` each, so the composed infinity mass stays
/// near the budget instead of growing linearly in T.
pub fn pld_composed(q: f64, sigma: f64, steps: u64, opts: &PldOptions) -> Result<PldPair> {
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    let per_step = PldOptions {
        truncation_mass: opts.truncation_mass / steps as f64,
        ..*opts
    };
    pld_single_step(q, sigma, &per_step)?.compose(steps, opts)
}

/// One Gaussian component (weight, mean) of the sampling distribution.
type Component = (f64, f64);

fn discretize(
    q: f64,
    sigma: f64,
    dir: Direction,
    opts: &PldOptions,
) -> Result<PrivacyLossDistribution> {
    let h = opts.grid_step;
    let var = sigma * sigma;
    let sign = match dir {
        Direction::Remove => 1.0,
        Direction::Add => -1.0,
    };
    let components: Vec<Component> = match dir {
        Direction::Remove if q < 1.0 => vec![(1.0 - q, 0.0), (q, 1.0)],
        Direction::Remove => vec![(1.0, 1.0)],
        Direction::Add => vec![(1.0, 0.0)],
    };
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();

    // ℓ(x) = sign · log(1 − q + q·exp((2x − 1)/(2σ²)))
    let loss = |x: f64| sign * log_add_exp(ln_1mq, ln_q + (2.0 * x - 1.0) / (2.0 * var));
    // x such that ℓ(x) = l, −∞ when l is below the loss's infimum.
    let inverse = |l: f64| {
        let arg = (sign * l).exp_m1() + q;
        if arg <= 0.0 {
            f64::NEG_INFINITY
        } else {
            var * (arg / q).ln() + 0.5
        }
    };

    // Each side of the x range carries at most half the truncation budget.
    let z = -norm_quantile(opts.truncation_mass / 2.0);
    let x_lo = -z * sigma;
    let x_hi = 1.0 + z * sigma;
    let (l_a, l_b) = (loss(x_lo), loss(x_hi));
    let (l_min, l_max) = if l_a <= l_b { (l_a, l_b) } else { (l_b, l_a) };

    let i_lo = (l_min / h).ceil() as i64;
    let i_hi = (l_max / h).ceil() as i64;
    let n = (i_hi - i_lo + 1) as usize;
    if n > opts.max_grid_len {
        return Err(Error::Configuration(format!(
            "loss range [{l_min:.3}, {l_max:.3}] needs {n} grid points at step {h:e}, \
             above the limit of {}",
            opts.max_grid_len
        )));
    }

    // Boundary k sits at loss (i_lo − 1 + k)·h; bin i spans boundaries i..i+1.
    let xs: Vec<f64> = (0..=n)
        .map(|k| inverse((i_lo - 1 + k as i64) as f64 * h).clamp(x_lo, x_hi))
        .collect();

    let mut masses = vec![0.0; n];
    for &(w, mu) in &components {
        let zs: Vec<f64> = xs.iter().map(|x| (x - mu) / sigma).collect();
        let cdf: Vec<f64> = zs.iter().map(|&z| norm_cdf(z)).collect();
        let sf: Vec<f64> = zs.iter().map(|&z| norm_sf(z)).collect();
        for (i, m) in masses.iter_mut().enumerate() {
            // For the add direction the loss decreases in x.
            let (a, b) = if zs[i] <= zs[i + 1] {
                (i, i + 1)
            } else {
                (i + 1, i)
            };
            let p = if zs[a] >= 0.0 {
                sf[a] - sf[b]
            } else if zs[b] <= 0.0 {
                cdf[b] - cdf[a]
            } else {
                1.0 - cdf[a] - sf[b]
            };
            *m += w * p.max(0.0);
        }
    }

    let tails: f64 = components
        .iter()
        .map(|&(w, mu)| w * (norm_cdf((x_lo - mu) / sigma) + norm_sf((x_hi - mu) / sigma)))
        .sum();
    // The cut tails go to +∞. The grid masses are rescaled to the rest:
    // their sum is off from 1 − tails only by CDF round-off (~1e-13), which
    // would otherwise pile up in the infinity bucket over many steps.
    let infinity_mass = tails.clamp(0.0, 1.0);
    let finite: f64 = masses.iter().sum();
    let scale = (1.0 - infinity_mass) / finite;
    masses.iter_mut().for_each(|m| *m *= scale);

    let pld = PrivacyLossDistribution {
        grid_step: h,
        min_index: i_lo,
        masses,
        infinity_mass,
        pessimistic: true,
    };
    Ok(pld.trimmed(0.0))
}

struct Convolver {
    planner: RealFftPlanner<f64>,
}

impl Convolver {
    fn new() -> Self {
        Convolver {
            planner: RealFftPlanner::new(),
        }
    }

    fn spectrum(
        fft: &Arc<dyn RealToComplex<f64>>,
        xs: &[f64],
        len: usize,
    ) -> Result<Vec<Complex<f64>>> {
        let mut input = fft.make_input_vec();
        input[..xs.len()].copy_from_slice(xs);
        let mut out = fft.make_output_vec();
        fft.process(&mut input, &mut out)
            .map_err(|e| Error::NumericalRange(format!("FFT of length {len} failed: {e}")))?;
        Ok(out)
    }

    /// Linear convolution of two mass vectors.
    fn convolve(&mut self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let out_len = a.len() + b.len() - 1;
        // Small inputs are cheaper (and exact up to summation order) directly.
        if a.len().min(b.len()) <= 32 {
            let mut out = vec![0.0; out_len];
            for (i, &x) in a.iter().enumerate() {
                for (j, &y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            return Ok(out);
        }
        let len = out_len.next_power_of_two();
        let fwd = self.planner.plan_fft_forward(len);
        let inv = self.planner.plan_fft_inverse(len);
        let mut fa = Self::spectrum(&fwd, a, len)?;
        if std::ptr::eq(a, b) {
            fa.iter_mut().for_each(|c| *c = *c * *c);
        } else {
            let fb = Self::spectrum(&fwd, b, len)?;
            fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
        }
        // The DC and Nyquist bins of a real signal's spectrum are real.
        fa[0].im = 0.0;
        if let Some(last) = fa.last_mut() {
            last.im = 0.0;
        }
        let mut time = inv.make_output_vec();
        inv.process(&mut fa, &mut time).map_err(|e| {
            Error::NumericalRange(format!("inverse FFT of length {len} failed: {e}"))
        })?;
        let scale = 1.0 / len as f64;
        let mut out = Vec::with_capacity(out_len);
        for &t in time.iter().take(out_len) {
            let v = t * scale;
            if v < -ROUNDOFF_FLOOR * 1e3 {
                return Err(Error::NumericalRange(format!(
                    "convolution produced mass {v:e}; FFT round-off out of control"
                )));
            }
            out.push(v.max(0.0));
        }
        Ok(out)
    }

    fn compose(
        &mut self,
        a: &PrivacyLossDistribution,
        b: &PrivacyLossDistribution,
        opts: &PldOptions,
        trim_per_side: f64,
    ) -> Result<PrivacyLossDistribution> {
        let out_len = a.masses.len() + b.masses.len() - 1;
        if out_len > opts.max_grid_len {
            return Err(Error::Resource(format!(
                "composed grid of {out_len} points exceeds the limit of {}",
                opts.max_grid_len
            )));
        }
        let mut masses = if std::ptr::eq(a, b) {
            self.convolve(&a.masses, &a.masses)?
        } else {
            self.convolve(&a.masses, &b.masses)?
        };
        let infinity_mass = a.infinity_mass + b.infinity_mass - a.infinity_mass * b.infinity_mass;
        let want = 1.0 - infinity_mass;
        let got: f64 = masses.iter().sum();
        if got > 0.0 {
            let scale = want / got;
            masses.iter_mut().for_each(|m| *m *= scale);
        }
        let pld = PrivacyLossDistribution {
            grid_step: a.grid_step,
            min_index: a.min_index + b.min_index,
            masses,
            infinity_mass,
            pessimistic: a.pessimistic && b.pessimistic,
        };
        Ok(pld.trimmed(trim_per_side))
    }
}

/// T-fold self-composition.
pub fn pld_compose(
    pld: &PrivacyLossDistribution,
    steps: u64,
    opts: &PldOptions,
) -> Result<PrivacyLossDistribution> {
    opts.validate()?;
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    if (pld.grid_step - opts.grid_step).abs() > 1e-15 * opts.grid_step {
        return Err(invalid("PLD grid step differs from the options' grid step"));
    }
    let mut conv = Convolver::new();
    // Mass trimmed from an intermediate standing for k steps is doubled by
    // every later squaring, so its budget is scaled by k / steps.
    let budget = |k: u64| opts.truncation_mass / 2.0 * k as f64 / steps as f64;
    let mut base = pld.clone();
    let mut base_steps = 1u64;
    let mut acc: Option<(PrivacyLossDistribution, u64)> = None;
    let mut k = steps;
    loop {
        if k & 1 == 1 {
            acc = Some(match acc {
                None => (base.clone(), base_steps),
                Some((r, r_steps)) => {
                    let n = r_steps + base_steps;
                    (conv.compose(&r, &base, opts, budget(n))?, n)
                }
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        base_steps *= 2;
        base = conv.compose(&base, &base, opts, budget(base_steps))?;
    }
    Ok(acc.expect("steps >= 1").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::gaussian_delta_oracle;

    fn coarse() -> PldOptions {
        PldOptions {
            grid_step: 1e-3,
            ..PldOptions::default()
        }
    }

    #[test]
    fn no_sampling_is_a_point_mass_at_zero() {
        let pair = pld_single_step(0.0, 1.0, &PldOptions::default()).unwrap();
        assert_eq!(pair.remove.masses(), &[1.0]);
        assert_eq!(pair.remove.min_loss(), 0.0);
        assert_eq!(pair.delta_at_epsilon(0.0), 0.0);
    }

    #[test]
    fn single_step_is_normalized() {
        let pair = pld_single_step(0.023, 0.8, &PldOptions::default()).unwrap();
        for pld in [&pair.remove, &pair.add] {
            assert!((pld.total_mass() - 1.0).abs() < 1e-9);
            assert!(pld.infinity_mass() <= 1e-12);
            assert!(pld.is_pessimistic());
        }
    }

    #[test]
    fn full_batch_matches_gaussian_oracle() {
        let pair = pld_single_step(1.0, 1.0, &PldOptions::default()).unwrap();
        for &eps in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let got = pair.delta_at_epsilon(eps);
            let want = gaussian_delta_oracle(1.0, eps);
            assert!((got - want).abs() < 1e-4, "eps={eps}: {got} vs {want}");
            assert!(got >= want - 1e-12, "pessimistic estimate fell below truth");
        }
    }

    #[test]
    fn hockey_stick_beyond_grid_is_infinity_mass() {
        let pair = pld_single_step(0.1, 1.0, &coarse()).unwrap();
        let pld = &pair.remove;
        assert_eq!(
            pld.delta_at_epsilon(pld.max_loss() + 1.0),
            pld.infinity_mass()
        );
    }

    #[test]
    fn epsilon_inversion_is_consistent() {
        let pair = pld_single_step(0.05, 0.9, &coarse()).unwrap();
        let composed = pair.compose(50, &coarse()).unwrap();
        for &d in &[1e-8, 1e-5, 1e-3, 1e-1] {
            let eps = composed.epsilon_at_delta(d).unwrap();
            assert!(composed.delta_at_epsilon(eps) <= d * (1.0 + 1e-9));
            if eps > 1e-3 {
                assert!(composed.delta_at_epsilon(eps - 1e-4) > d);
            }
        }
        let d0 = composed.delta_at_epsilon(0.0);
        assert_eq!(composed.epsilon_at_delta(d0).unwrap(), 0.0);
    }

    #[test]
    fn unattainable_delta_is_reported() {
        let pld = PrivacyLossDistribution::from_masses(0.1, 0, vec![0.5, 0.4], 0.1, true).unwrap();
        assert!(matches!(
            pld.epsilon_at_delta(0.05),
            Err(Error::UnattainableDelta { .. })
        ));
    }

    #[test]
    fn point_mass_composes_to_point_mass() {
        let opts = PldOptions {
            grid_step: 0.01,
            ..PldOptions::default()
        };
        let p = PrivacyLossDistribution::point_mass(0.01, 7).unwrap();
        for t in [1u64, 2, 5, 64, 100] {
            let c = pld_compose(&p, t, &opts).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c.min_index(), 7 * t as i64);
            assert!((c.masses()[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_composition_is_identity() {
        let opts = coarse();
        let pair = pld_single_step(0.05, 1.0, &opts).unwrap();
        assert_eq!(pld_compose(&pair.remove, 1, &opts).unwrap(), pair.remove);
    }

    #[test]
    fn grid_limit_is_enforced() {
        let opts = PldOptions {
            max_grid_len: 1000,
            ..PldOptions::default()
        };
        assert!(matches!(
            pld_single_step(0.5, 1.0, &opts),
            Err(Error::Configuration(_))
        ));
        let opts = PldOptions {
            grid_step: 1e-2,
            max_grid_len: 4000,
            ..PldOptions::default()
        };
        let pair = pld_single_step(1.0, 1.0, &opts).unwrap();
        assert!(matches!(
            pld_compose(&pair.remove, 4, &opts),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn both_directions_bound_the_pair() {
        let pair = pld_single_step(0.1, 0.8, &coarse()).unwrap();
        for &eps in &[0.0, 0.3, 1.0, 2.5] {
            let d = pair.delta_at_epsilon(eps);
            assert!(d >= pair.remove.delta_at_epsilon(eps));
            assert!(d >= pair.add.delta_at_epsilon(eps));
        }
    }
}
