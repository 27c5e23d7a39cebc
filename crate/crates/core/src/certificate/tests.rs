use super::*;
use crate::model::{Gaussian, SamplingMeasure};
use crate::Error;

fn setup(n: usize, sigma: f64) -> (Gaussian, SamplingMeasure<1>) {
    (Gaussian::new(sigma).unwrap(), SamplingMeasure::uniform_grid(n, 0.0, 1.0).unwrap())
}

#[test]
fn single_centered_source() {
    let (psf, sampling) = setup(101, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let cert = solve_certificate(&ke, &[0.5], &Domain::unit()).unwrap();
    assert!(cert.beta[0].abs() < 1e-9, "{:?}", cert.beta);
    let k = kernel(&ke, 0.5, 0.5, 0, 0).unwrap();
    let expected = ke.w(0.5) / k;
    assert!((cert.alpha[0] - expected).abs() <= 1e-10 * expected.abs());
    assert!(cert.is_valid());
}

#[test]
fn interpolates_weight_at_sources() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let locs = [0.2, 0.5, 0.8];
    let cert = solve_certificate(&ke, &locs, &Domain::unit()).unwrap();
    assert!(cert.margin_report.interp_residual <= 1e-8);
    assert!(cert.margin_report.deriv_residual <= 1e-8 * cert.margin_report.max_w.max(1.0) * 100.0);
    for &t in &locs {
        let q = certificate_value(&cert, &ke, t);
        assert!((q - ke.w(t)).abs() <= 1e-8 * ke.w(t), "{q} vs {}", ke.w(t));
    }
}

#[test]
fn spread_sources_have_positive_margin() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let cert = solve_certificate(&ke, &[0.25, 0.5, 0.75], &Domain::unit()).unwrap();
    assert!(cert.is_valid(), "{:?}", cert.margin_report);
    assert!(cert.margin_report.min_margin > 0.0);
    assert!(cert.margin_report.max_excess <= BRANCH_TOL);
    assert_eq!(cert.margin_report.near_equality_off_support, 0);
}

#[test]
fn value_matches_plain_sum() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let locs = [0.3, 0.7];
    let cert = solve_certificate(&ke, &locs, &Domain::unit()).unwrap();
    assert_eq!(cert.branch, Branch::Direct);
    for j in 0..=50 {
        let t = j as f64 / 50.0;
        let mut plain = 0.0;
        for (i, &ti) in locs.iter().enumerate() {
            plain += cert.alpha[i] * kernel(&ke, t, ti, 0, 0).unwrap();
            plain += cert.beta[i] * kernel(&ke, t, ti, 0, 1).unwrap();
        }
        let q = certificate_value(&cert, &ke, t);
        assert!((q - plain).abs() <= 1e-12 * ke.w(t).max(1.0), "{t}: {q} vs {plain}");
    }
}

#[test]
fn symmetric_configuration_gives_symmetric_certificate() {
    let (psf, sampling) = setup(101, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let cert = solve_certificate(&ke, &[0.35, 0.65], &Domain::unit()).unwrap();
    assert!((cert.alpha[0] - cert.alpha[1]).abs() <= 1e-8 * cert.alpha[0].abs());
    assert!((cert.beta[0] + cert.beta[1]).abs() <= 1e-8 * cert.beta[0].abs().max(1e-6));
    for j in 0..=20 {
        let t = 0.1 + 0.8 * j as f64 / 20.0;
        let a = certificate_value(&cert, &ke, t);
        let b = certificate_value(&cert, &ke, 1.0 - t);
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn too_few_samples_is_independence_failure() {
    let psf = Gaussian::new(0.1).unwrap();
    let sampling = SamplingMeasure::uniform(vec![[0.3], [0.6]]).unwrap();
    let ke = KernelEval::new(&psf, &sampling);
    match solve_certificate(&ke, &[0.4, 0.5], &Domain::unit()) {
        Err(Error::ConditionFailure { condition, .. }) => assert_eq!(condition, "independence"),
        other => panic!("expected independence failure, got {other:?}"),
    }
}

#[test]
fn close_pair_is_certified() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let cert = solve_certificate(&ke, &[0.495, 0.505], &Domain::unit()).unwrap();
    assert!(cert.is_valid(), "{:?}", cert.margin_report);
    assert!(cert.margin_report.interp_residual <= 1e-8);
}

#[test]
fn four_clustered_sources_are_certified() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let locs = [0.2, 0.205, 0.7, 0.705];
    let cert = solve_certificate(&ke, &locs, &Domain::unit()).unwrap();
    assert!(cert.is_valid(), "{:?}", cert.margin_report);
}

#[test]
fn verification_grid_contents() {
    let g = verification_grid(&Domain::unit(), &[0.5, 0.9995]);
    // 10⁴ uniform points, 100 around 0.5, 50 + 25 around 0.9995.
    assert_eq!(g.len(), VERIFY_GRID + 100 + 75);
    assert!(g.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn rejects_duplicate_locations() {
    let (psf, sampling) = setup(50, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    assert!(solve_certificate(&ke, &[0.5, 0.5], &Domain::unit()).is_err());
    assert!(solve_certificate(&ke, &[], &Domain::unit()).is_err());
}

#[test]
fn pair_conditions_hold() {
    let (psf, sampling) = setup(100, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let report = check_conditions(&ke, &[0.45, 0.55], &Domain::unit(), 1000, None, 7).unwrap();
    assert!(report.positivity_ok());
    assert!(report.independence_ok());
    assert!(report.determinantal_sign_consistent, "{report:?}");
    assert_eq!(
        report.determinantal_positive + report.determinantal_negative + report.determinantal_uncertified,
        1000
    );
    assert!(report.all_ok(), "{report:?}");
}

#[test]
fn single_sample_fails_independence() {
    let psf = Gaussian::new(0.1).unwrap();
    let sampling = SamplingMeasure::uniform(vec![[0.5]]).unwrap();
    let ke = KernelEval::new(&psf, &sampling);
    let report = check_conditions(&ke, &[0.4], &Domain::unit(), 10, None, 0).unwrap();
    assert!(report.independence_min_singular.abs() < 1e-20);
    assert!(!report.independence_ok());
    assert!(!report.warnings.is_empty());
}

#[test]
fn conditions_are_deterministic() {
    let (psf, sampling) = setup(60, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    let a = check_conditions(&ke, &[0.3, 0.6], &Domain::unit(), 50, Some(0.05), 3).unwrap();
    let b = check_conditions(&ke, &[0.3, 0.6], &Domain::unit(), 50, Some(0.05), 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lambda_det_needs_matching_tuple() {
    let (psf, sampling) = setup(60, 0.1);
    let ke = KernelEval::new(&psf, &sampling);
    assert!(lambda_det(&ke, &[0.5], &[0.1, 0.2]).is_err());
    let (d, bound) = lambda_det(&ke, &[0.5], &[0.1, 0.4, 0.8]).unwrap();
    assert!(d.abs() > bound);
}

#[test]
fn default_rho_is_half_gap() {
    let d = Domain::unit();
    assert!((default_rho(&[0.3, 0.5, 0.9], &d) - 0.1).abs() < 1e-15);
    assert!((default_rho(&[0.5], &d) - 0.1).abs() < 1e-15);
    assert!((default_rho(&[0.5, 0.52], &d) - 0.01).abs() < 1e-15);
}
