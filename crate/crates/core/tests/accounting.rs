use dpvar::accountant::{
    default_orders, gaussian_delta_oracle, pld_composed, rdp_curve, rdp_to_dp, MechanismSpec,
    PldOptions, PrivacyParams, RdpConversion,
};
use dpvar::calibration::{calibrate_sigma, AccountantKind, CalibrationRequest};
use dpvar::profiles::{
    closed_form_profile, crossing_report, default_delta_grid, log_spaced, Profiler,
};
use dpvar::Error;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn request(
    n: u64,
    b: u64,
    t: u64,
    eps: f64,
    delta: f64,
    acc: AccountantKind,
) -> CalibrationRequest {
    CalibrationRequest::new(n, b, t, PrivacyParams::new(eps, delta).unwrap(), acc)
}

/// Gaussian mechanism δ(ε), from the normal CDF directly.
fn gaussian_delta(sigma: f64, eps: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let a = 1.0 / (2.0 * sigma);
    n.cdf(a - eps * sigma) - eps.exp() * n.cdf(-a - eps * sigma)
}

/// Invert `gaussian_delta` by bisection.
fn gaussian_epsilon(sigma: f64, delta: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(sigma, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn library_gaussian_oracle_agrees_with_cdf_formula() {
    for sigma in [0.3, 1.0, 3.0] {
        for eps in [0.0, 0.1, 1.0, 5.0] {
            let (a, b) = (
                gaussian_delta_oracle(sigma, eps),
                gaussian_delta(sigma, eps),
            );
            assert!((a - b).abs() < 1e-12, "sigma={sigma} eps={eps}: {a} vs {b}");
        }
    }
}

#[test]
fn single_step_full_batch_profile_matches_gaussian_inverse() {
    let opts = PldOptions::default();
    let pld = pld_composed(1.0, 1.0, 1, &opts).unwrap();
    for delta in log_spaced(1e-8, 1e-2, 20) {
        let got = pld.epsilon_at_delta(delta).unwrap();
        let want = gaussian_epsilon(1.0, delta);
        // The grid is pessimistic, so the answer sits slightly above.
        assert!(got >= want - 1e-9, "delta={delta}: {got} < {want}");
        assert!(got - want < 2e-3, "delta={delta}: {got} vs {want}");
    }
}

#[test]
fn gaussian_composition_of_full_batch_steps() {
    // T full-batch steps at σ equal one step at σ/√T. Rounding up moves
    // each step's loss by at most one grid step.
    let opts = PldOptions::default();
    let slack = 16.0 * opts.grid_step;
    let pld = pld_composed(1.0, 4.0, 16, &opts).unwrap();
    for eps in [0.5, 1.0, 2.0] {
        let got = pld.delta_at_epsilon(eps);
        let want = gaussian_delta(1.0, eps);
        assert!(got >= want - 1e-12, "eps={eps}: {got} vs {want}");
        assert!(
            got <= gaussian_delta(1.0, eps - slack) + 1e-9,
            "eps={eps}: {got} vs {want}"
        );
    }
}

#[test]
fn base_case_calibrations() {
    let pld =
        calibrate_sigma(&request(180_000, 4096, 150, 4.0, 1e-6, AccountantKind::Pld)).unwrap();
    assert!((pld - 0.800).abs() / 0.800 < 0.02, "{pld}");
    let rdp =
        calibrate_sigma(&request(180_000, 4096, 150, 4.0, 1e-6, AccountantKind::Rdp)).unwrap();
    assert!((rdp - 0.852).abs() / 0.852 < 0.03, "{rdp}");
    // RDP is the looser accountant, so it asks for more noise.
    assert!(rdp > pld);
}

#[test]
fn calibrated_sigma_meets_the_target() {
    let req = request(60_000, 1024, 300, 2.0, 1e-5, AccountantKind::Pld);
    let sigma = calibrate_sigma(&req).unwrap();
    let spec = MechanismSpec::from_batch(60_000, 1024, sigma, 300).unwrap();
    let eps = spec.epsilon_pld(1e-5, &PldOptions::default()).unwrap();
    assert!(eps <= 2.0 + 1e-9, "{eps}");
    assert!(eps > 2.0 * 0.97, "{eps}");
}

#[test]
fn classic_conversion_is_never_tighter() {
    let spec = MechanismSpec::new(0.02, 1.0, 500).unwrap();
    let curve = rdp_curve(&spec, &default_orders()).unwrap();
    for delta in [1e-8, 1e-6, 1e-4] {
        let improved = rdp_to_dp(&curve, delta, RdpConversion::Improved).unwrap();
        let classic = rdp_to_dp(&curve, delta, RdpConversion::Classic).unwrap();
        assert!(classic >= improved, "delta={delta}");
    }
}

#[test]
fn infeasible_targets_are_rejected() {
    assert!(PrivacyParams::new(-1.0, 1e-6).is_err());
    assert!(PrivacyParams::new(1.0, 1.0).is_err());
    assert!(MechanismSpec::new(1.5, 1.0, 10).is_err());
    assert!(MechanismSpec::from_batch(100, 200, 1.0, 10).is_err());
    let spec = MechanismSpec::new(1.0, 1.0, 1).unwrap();
    let err = Profiler::new(
        spec,
        &PldOptions {
            grid_step: 10.0,
            ..Default::default()
        },
    );
    // A coarse grid either succeeds or fails with a configuration error, never a panic.
    if let Err(e) = err {
        assert!(
            matches!(e, Error::Configuration(_) | Error::InvalidArgument(_)),
            "{e}"
        );
    }
}

#[test]
fn crossing_between_closed_form_profiles() {
    // Same c = T/(2σ²): identical curves, no crossings.
    let grid = default_delta_grid();
    let a = closed_form_profile(1.0, 100, &grid).unwrap();
    let b = closed_form_profile(2.0, 400, &grid).unwrap();
    let r = crossing_report(&a, &b).unwrap();
    assert!(r.crossings.is_empty());
    // Strictly more noise per unit of composition: b below a everywhere.
    let c = closed_form_profile(2.0, 100, &grid).unwrap();
    let r = crossing_report(&a, &c).unwrap();
    assert!(r.crossings.is_empty());
    assert_eq!(r.order_at_smallest_delta, r.order_at_largest_delta);
}

#[test]
fn default_grid_shape() {
    let g = default_delta_grid();
    assert_eq!(g.len(), 200);
    assert_eq!(g[0], 1e-10);
    assert_eq!(g[199], 1e-2);
    assert!(g.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn profile_is_non_increasing(q in 0.005f64..0.2, sigma in 0.6f64..2.0, steps in 1u64..200) {
        let spec = MechanismSpec::new(q, sigma, steps).unwrap();
        let p = Profiler::new(spec, &PldOptions::default()).unwrap();
        let prof = p.profile(&log_spaced(1e-9, 1e-2, 25)).unwrap();
        for w in prof.points.windows(2) {
            prop_assert!(w[1].epsilon <= w[0].epsilon + 1e-12);
        }
    }

    #[test]
    fn more_noise_means_less_epsilon(q in 0.01f64..0.1, sigma in 0.7f64..1.5, steps in 10u64..300) {
        let opts = PldOptions::default();
        let lo = MechanismSpec::new(q, sigma, steps).unwrap().epsilon_pld(1e-6, &opts).unwrap();
        let hi = MechanismSpec::new(q, sigma * 1.2, steps).unwrap().epsilon_pld(1e-6, &opts).unwrap();
        prop_assert!(hi < lo);
    }

    #[test]
    fn pld_is_below_rdp(q in 0.005f64..0.1, sigma in 0.7f64..2.0, steps in 10u64..500) {
        let spec = MechanismSpec::new(q, sigma, steps).unwrap();
        let pld = spec.epsilon_pld(1e-6, &PldOptions::default()).unwrap();
        let rdp = spec.epsilon_rdp(1e-6, &default_orders(), RdpConversion::Improved).unwrap();
        prop_assert!(pld <= rdp * 1.001, "pld {} rdp {}", pld, rdp);
    }

    #[test]
    fn calibration_round_trip_and_monotone_in_epsilon(eps in 1.0f64..8.0) {
        let lo = calibrate_sigma(&request(50_000, 1000, 200, eps, 1e-6, AccountantKind::Rdp)).unwrap();
        let hi = calibrate_sigma(&request(50_000, 1000, 200, eps * 1.5, 1e-6, AccountantKind::Rdp)).unwrap();
        prop_assert!(hi < lo);
        let spec = MechanismSpec::from_batch(50_000, 1000, lo, 200).unwrap();
        let got = spec.epsilon_rdp(1e-6, &default_orders(), RdpConversion::Improved).unwrap();
        prop_assert!(got <= eps + 1e-9 && got >= eps * 0.98, "target {} got {}", eps, got);
    }

    #[test]
    fn closed_form_depends_only_on_ratio(sigma in 0.3f64..5.0, steps in 1u64..5000, k in 1u64..50) {
        let grid = log_spaced(1e-10, 1e-2, 30);
        let a = closed_form_profile(sigma, steps, &grid).unwrap();
        let b = closed_form_profile(sigma * (k as f64).sqrt(), steps * k, &grid).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            prop_assert!((x.epsilon - y.epsilon).abs() <= 1e-9 * x.epsilon.max(1.0));
        }
    }
}
