//! Log-space OLS with t-test p-values, Spearman rank correlation and the
//! binomial / Student-t tails behind them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::configs::Config;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Covariate {
    #[serde(rename = "log_b")]
    LogB,
    #[serde(rename = "log_T")]
    LogT,
    #[serde(rename = "log_eta")]
    LogEta,
    #[serde(rename = "log_C")]
    LogC,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::LogB => "log_b",
            Covariate::LogT => "log_T",
            Covariate::LogEta => "log_eta",
            Covariate::LogC => "log_C",
        }
    }

    pub fn value(self, c: &Config) -> f64 {
        match self {
            Covariate::LogB => (c.b as f64).ln(),
            Covariate::LogT => (c.steps as f64).ln(),
            Covariate::LogEta => c.eta.ln(),
            Covariate::LogC => c.compute().ln(),
        }
    }
}

impl std::str::FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches("log_").to_ascii_lowercase().as_str() {
            "b" => Ok(Covariate::LogB),
            "t" => Ok(Covariate::LogT),
            "eta" => Ok(Covariate::LogEta),
            "c" => Ok(Covariate::LogC),
            other => Err(invalid(format!(
                "unknown covariate '{other}' (expected b, T, eta or C)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
}

impl Coefficient {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub covariate_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub intercept: Option<Coefficient>,
    pub residual_dof: usize,
    pub r_squared: f64,
    pub observations: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, i: usize) -> Coefficient {
        Coefficient {
            estimate: self.coefficients[i],
            std_error: self.standard_errors[i],
            t_statistic: self.t_statistics[i],
            p_value: self.p_values[i],
        }
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Columns whose residual after projection onto earlier columns is below
/// this fraction of their own norm are treated as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares fit of y on log-transformed hyperparameters.
pub fn ols_log_regression(
    records: &[(Config, f64)],
    covariates: &[Covariate],
    intercept: bool,
) -> Result<RegressionResult> {
    if covariates.is_empty() {
        return Err(invalid("at least one covariate is required"));
    }
    let k = covariates.len() + usize::from(intercept);
    let n = records.len();
    if n <= k {
        return Err(invalid(format!(
            "{n} observations cannot fit {k} parameters with residual degrees of freedom"
        )));
    }
    if records.iter().any(|(_, y)| !y.is_finite()) {
        return Err(invalid("responses must be finite"));
    }
    let mut names: Vec<&str> = Vec::with_capacity(k);
    if intercept {
        names.push("intercept");
    }
    names.extend(covariates.iter().map(|c| c.name()));
    let x = DMatrix::from_fn(n, k, |i, j| {
        let j = if intercept { j } else { j + 1 };
        if j == 0 {
            1.0
        } else {
            covariates[j - 1].value(&records[i].0)
        }
    });
    let y = DVector::from_iterator(n, records.iter().map(|(_, y)| *y));

    check_rank(&x, &names)?;

    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign(names.iter().map(|s| s.to_string()).collect()))?;
    let residuals = &y - &x * &beta;
    let ssr = residuals.norm_squared();
    let dof = n - k;
    let sigma2 = ssr / dof as f64;

    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign(names.iter().map(|s| s.to_string()).collect()))?;
    let cov_diag: Vec<f64> = (0..k)
        .map(|i| r_inv.row(i).norm_squared() * sigma2)
        .collect();

    let coef = |i: usize| -> Coefficient {
        let estimate = beta[i];
        let se = cov_diag[i].sqrt();
        let (t, p) = if se > 0.0 {
            let t = estimate / se;
            (t, (2.0 * student_t_sf(t.abs(), dof as f64)).min(1.0))
        } else if estimate == 0.0 {
            (0.0, 1.0)
        } else {
            (estimate.signum() * f64::INFINITY, 0.0)
        };
        Coefficient {
            estimate,
            std_error: se,
            t_statistic: t,
            p_value: p,
        }
    };

    let offset = usize::from(intercept);
    let slopes: Vec<Coefficient> = (offset..k).map(coef).collect();
    let sst = if intercept {
        let mean = y.mean();
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

    Ok(RegressionResult {
        covariate_names: covariates.iter().map(|c| c.name().to_string()).collect(),
        coefficients: slopes.iter().map(|c| c.estimate).collect(),
        standard_errors: slopes.iter().map(|c| c.std_error).collect(),
        t_statistics: slopes.iter().map(|c| c.t_statistic).collect(),
        p_values: slopes.iter().map(|c| c.p_value).collect(),
        intercept: intercept.then(|| coef(0)),
        residual_dof: dof,
        r_squared,
        observations: n,
    })
}

/// Gram-Schmidt style scan: each column is projected onto the accepted
/// ones; a vanishing residual means it is a combination of them, and the
/// error names it together with the columns that combination uses.
fn check_rank(x: &DMatrix<f64>, names: &[&str]) -> Result<()> {
    let mut accepted: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::SingularDesign(vec![names[j].to_string()]));
        }
        if accepted.is_empty() {
            accepted.push(j);
            continue;
        }
        let basis = x.select_columns(accepted.iter());
        let coef = basis
            .clone()
            .svd(true, true)
            .solve(&col, 1e-14)
            .map_err(|e| Error::SingularDesign(vec![e.to_string()]))?;
        let resid = (&col - &basis * &coef).norm();
        if resid <= RANK_TOLERANCE * norm {
            let mut involved: Vec<String> = accepted
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(&i, _)| names[i].to_string())
                .collect();
            involved.push(names[j].to_string());
            return Err(Error::SingularDesign(involved));
        }
        accepted.push(j);
    }
    Ok(())
}

/// Ranks starting at 1; ties share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid(
            "correlation needs two equal-length inputs of length at least 2",
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(invalid("spearman inputs must not contain NaN"));
    }
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid(
            "correlation needs two equal-length inputs of length at least 2",
        ));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// P[Binomial(r, p) ≥ v].
pub fn binomial_tail(r: u64, p: f64, v: u64) -> f64 {
    assert!(v <= r, "threshold {v} exceeds trials {r}");
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    if v == 0 || p == 1.0 {
        return 1.0;
    }
    if p == 0.0 {
        return 0.0;
    }
    // P[X ≥ v] = I_p(v, r − v + 1)
    beta_reg(v as f64, (r - v + 1) as f64, p).clamp(0.0, 1.0)
}

/// P[T > t] for Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    assert!(dof > 0.0, "degrees of freedom must be positive");
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = dof / (dof + t * t);
    let half_tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Config> {
        let mut out = Vec::new();
        for &b in &[1024u64, 2048] {
            for &t in &[125u64, 250, 500, 1000] {
                out.push(Config::new(b, t, 3e-3, 0.5).unwrap());
            }
        }
        out
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let recs: Vec<(Config, f64)> = grid()
            .into_iter()
            .map(|c| (c, 2.0 * (c.b as f64).ln() + 3.0 * (c.steps as f64).ln()))
            .collect();
        let r = ols_log_regression(&recs, &[Covariate::LogB, Covariate::LogT], true).unwrap();
        assert!((r.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((r.coefficients[1] - 3.0).abs() < 1e-9);
        assert!(r.p_values.iter().all(|p| *p < 1e-6));
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_response_has_zero_slopes() {
        let recs: Vec<(Config, f64)> = grid().into_iter().map(|c| (c, 0.7)).collect();
        let r = ols_log_regression(&recs, &[Covariate::LogB, Covariate::LogT], true).unwrap();
        assert!(r.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((r.intercept.unwrap().estimate - 0.7).abs() < 1e-9);
    }

    #[test]
    fn collinear_design_names_covariates() {
        let recs: Vec<(Config, f64)> = grid().into_iter().map(|c| (c, (c.b as f64).ln())).collect();
        let err = ols_log_regression(
            &recs,
            &[Covariate::LogB, Covariate::LogT, Covariate::LogC],
            true,
        )
        .unwrap_err();
        match err {
            Error::SingularDesign(names) => {
                assert_eq!(names, vec!["log_b", "log_T", "log_C"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        // Constant η is collinear with the intercept.
        let err =
            ols_log_regression(&recs, &[Covariate::LogB, Covariate::LogEta], true).unwrap_err();
        assert!(matches!(err, Error::SingularDesign(ref n) if n.contains(&"log_eta".to_string())));
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[4.0, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 4.0]).unwrap(), -1.0);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(matches!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_tail(5, 0.3, 0), 1.0);
        assert!((binomial_tail(2, 0.5, 2) - 0.25).abs() < 1e-14);
        assert!((binomial_tail(10, 0.7411, 10) - 0.05).abs() < 1e-4);
        // Direct sum for a mid-range case.
        let (r, p, v) = (20u64, 0.35f64, 9u64);
        let direct: f64 = (v..=r)
            .map(|k| {
                let lc = crate::special::ln_binomial(r, k);
                (lc + k as f64 * p.ln() + (r - k) as f64 * (1.0 - p).ln()).exp()
            })
            .sum();
        assert!((binomial_tail(r, p, v) - direct).abs() < 1e-12);
    }

    #[test]
    fn student_t_examples() {
        assert!((student_t_sf(0.0, 5.0) - 0.5).abs() < 1e-15);
        assert!((student_t_sf(1.96, 1e7) - 0.0249979).abs() < 1e-5);
        assert!((student_t_sf(-1.0, 3.0) - (1.0 - student_t_sf(1.0, 3.0))).abs() < 1e-15);
    }

    #[test]
    fn student_t_matches_numerical_integration() {
        // Simpson's rule on the density from t=2 to a far cutoff.
        let dof: f64 = 10.0;
        let ln_norm = statrs::function::gamma::ln_gamma((dof + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(dof / 2.0)
            - 0.5 * (dof * std::f64::consts::PI).ln();
        let pdf = |t: f64| (ln_norm - (dof + 1.0) / 2.0 * (1.0 + t * t / dof).ln()).exp();
        let (a, b, n) = (2.0, 2000.0, 2_000_000);
        let h = (b - a) / n as f64;
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((student_t_sf(2.0, dof) - integral).abs() < 1e-6);
        assert!((student_t_sf(2.0, dof) - 0.0367).abs() < 1e-3);
    }
}
