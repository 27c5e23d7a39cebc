use super::*;
use crate::model::{distance, weight, Gaussian, SourceConfiguration};
use crate::simulate::{add_noise, synthesize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(locs: &[f64], amps: &[f64], n: usize, sigma: f64) -> (ObservationSet<1>, Gaussian, SourceConfiguration<1>) {
    let psf = Gaussian::new(sigma).unwrap();
    let sampling = SamplingMeasure::uniform_grid(n, 0.0, 1.0).unwrap();
    let cfg = SourceConfiguration::new(locs.iter().map(|&t| [t]).collect(), amps.to_vec()).unwrap();
    (synthesize(&cfg, &psf, &sampling), psf, cfg)
}

fn truth_measure(cfg: &SourceConfiguration<1>) -> AtomicMeasure<1> {
    AtomicMeasure::from_parts(cfg.locations(), cfg.amplitudes()).unwrap()
}

fn oracle_opts(cfg: &SourceConfiguration<1>, obs: &ObservationSet<1>, psf: &Gaussian) -> SolverOptions {
    SolverOptions::new(cfg.weighted_mass(psf, &obs.sampling, Weighting::Sampled))
}

#[test]
fn objective_examples() {
    let (obs, psf, cfg) = instance(&[0.3, 0.6], &[1.0, 0.5], 100, 0.1);
    assert!(objective(&truth_measure(&cfg), &obs, &psf) <= 1e-20);
    assert_eq!(objective(&AtomicMeasure::empty(), &obs, &psf), obs.energy());

    let sampling = SamplingMeasure::uniform(vec![[0.2]]).unwrap();
    let single = ObservationSet::new(sampling, vec![0.7]).unwrap();
    let m = AtomicMeasure::from_parts(&[[0.25]], &[2.0]).unwrap();
    let expected = (2.0 * Psf::<1>::eval(&psf, &[0.2], &[0.25]) - 0.7f64).powi(2);
    assert!((objective(&m, &single, &psf) - expected).abs() <= 1e-15);
}

#[test]
fn residual_gradient_examples() {
    let (obs, psf, cfg) = instance(&[0.3], &[1.0], 50, 0.1);
    assert!(residual_gradient(&truth_measure(&cfg), &obs, &psf).iter().all(|r| r.abs() < 1e-15));
    let empty = AtomicMeasure::empty();
    let r = residual_gradient(&empty, &obs, &psf);
    for (ri, xi) in r.iter().zip(&obs.values) {
        assert_eq!(*ri, -2.0 * xi);
    }
    let scaled = ObservationSet::new(obs.sampling.clone(), obs.values.iter().map(|x| 3.0 * x).collect()).unwrap();
    let r3 = residual_gradient(&empty, &scaled, &psf);
    for (a, b) in r3.iter().zip(&r) {
        assert!((a - 3.0 * b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn refine_keeps_optimum() {
    let (obs, psf, cfg) = instance(&[0.35, 0.62], &[1.0, 0.8], 100, 0.1);
    let opts = oracle_opts(&cfg, &obs, &psf);
    let problem = Problem::new(&obs, &psf, Weighting::Sampled, Domain::unit());
    let m = truth_measure(&cfg);
    let out = local_refine(&m, &problem, &opts).unwrap();
    assert_eq!(out.len(), 2);
    for (a, b) in out.atoms.iter().zip(&m.atoms) {
        assert!((a.location[0] - b.location[0]).abs() <= 1e-10);
        assert!((a.mass - b.mass).abs() <= 1e-10);
    }
}

#[test]
fn refine_moves_toward_truth() {
    let (obs, psf, _) = instance(&[0.5], &[1.0], 100, 0.1);
    let opts = SolverOptions::new(2.0 * weight(&psf, &obs.sampling, &[0.5]));
    let problem = Problem::new(&obs, &psf, Weighting::Sampled, Domain::unit());
    let start = AtomicMeasure::from_parts(&[[0.5 + 0.001]], &[1.0]).unwrap();
    let before = objective(&start, &obs, &psf);
    let out = local_refine(&start, &problem, &opts).unwrap();
    assert!(objective(&out, &obs, &psf) < before);
    assert!((out.atoms[0].location[0] - 0.5).abs() < 0.001);
    assert!((out.atoms[0].location[0] - 0.5).abs() < 1e-9);
}

#[test]
fn refine_merges_coincident_atoms() {
    let (obs, psf, _) = instance(&[0.4], &[1.0], 100, 0.1);
    let opts = SolverOptions::new(2.0 * weight(&psf, &obs.sampling, &[0.4]));
    let problem = Problem::new(&obs, &psf, Weighting::Sampled, Domain::unit());
    let start = AtomicMeasure::from_parts(&[[0.4], [0.4]], &[0.5, 0.5]).unwrap();
    let out = local_refine(&start, &problem, &opts).unwrap();
    assert_eq!(out.len(), 1);
    assert!((out.atoms[0].mass - 1.0).abs() <= 1e-10);
}

#[test]
fn merge_rule() {
    let m = AtomicMeasure::from_parts(&[[0.1], [0.1 + 1e-9], [0.5]], &[1.0, 3.0, 2.0]).unwrap();
    let out = merge_close(&m, 1e-6);
    assert_eq!(out.len(), 2);
    assert_eq!(out.atoms[0].mass, 4.0);
    assert!((out.atoms[0].location[0] - (0.1 + 0.75e-9)).abs() < 1e-17);
}

#[test]
fn gap_examples() {
    let (obs, psf, cfg) = instance(&[0.3, 0.7], &[1.0, 1.0], 100, 0.1);
    let opts = oracle_opts(&cfg, &obs, &psf);
    let problem = Problem::new(&obs, &psf, Weighting::Sampled, Domain::unit());
    assert!(duality_gap(&AtomicMeasure::empty(), &problem, &opts).unwrap() > 0.0);
    let truth = truth_measure(&cfg);
    let g = duality_gap(&truth, &problem, &opts).unwrap();
    let obj = objective(&truth, &obs, &psf);
    assert!(g >= -1e-12 && g <= opts.gap_tol * (1.0 + obj), "{g}");
}

#[test]
fn gap_bounds_suboptimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let k = rng.random_range(1..4);
        let locs: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.9)).collect();
        let amps: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let (clean, psf, cfg) = instance(&locs, &amps, 60, 0.1);
        let obs = add_noise(&clean, 0.05, rng.random()).unwrap();
        let tau = 0.8 * cfg.weighted_mass(&psf, &obs.sampling, Weighting::Sampled);
        let opts = SolverOptions { tau, max_iters: 300, ..SolverOptions::default() };
        let best = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &opts).unwrap();
        let f_opt = objective(&best.measure, &obs, &psf);
        let problem = Problem::new(&obs, &psf, Weighting::Sampled, Domain::unit());
        // Arbitrary feasible points: random perturbations of the truth scaled into the budget.
        for _ in 0..5 {
            let pts: Vec<Point<1>> = cfg.locations().iter().map(|t| [(t[0] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)]).collect();
            let mut m = AtomicMeasure::from_parts(&pts, &vec![0.5; pts.len()]).unwrap();
            let wm = m.weighted_mass(&psf, &obs.sampling, Weighting::Sampled);
            if wm > tau {
                m.atoms.iter_mut().for_each(|a| a.mass *= tau / wm);
            }
            let gap = duality_gap(&m, &problem, &opts).unwrap();
            let sub = objective(&m, &obs, &psf) - f_opt;
            assert!(sub <= gap + 1e-9 * obs.energy(), "sub {sub} gap {gap}");
            assert!(gap >= -1e-12);
        }
    }
}

#[test]
fn single_source_exact() {
    let (obs, psf, cfg) = instance(&[0.5], &[1.0], 100, 0.1);
    let opts = oracle_opts(&cfg, &obs, &psf);
    let res = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &opts).unwrap();
    assert!(res.converged, "{res:?}");
    assert_eq!(res.measure.len(), 1);
    assert!((res.measure.atoms[0].location[0] - 0.5).abs() <= 1e-6);
    assert!((res.measure.atoms[0].mass - 1.0).abs() <= 1e-6);
}

#[test]
fn zero_signal_and_zero_budget() {
    let psf = Gaussian::new(0.1).unwrap();
    let sampling = SamplingMeasure::uniform_grid(50, 0.0, 1.0).unwrap();
    let obs = ObservationSet::new(sampling, vec![0.0; 50]).unwrap();
    let res = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &SolverOptions::new(5.0)).unwrap();
    assert!(res.measure.is_empty() && res.converged);

    let (obs, psf, _) = instance(&[0.5], &[1.0], 50, 0.1);
    let res = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &SolverOptions::new(0.0)).unwrap();
    assert!(res.measure.is_empty() && res.converged);
}

#[test]
fn close_pair_recovered() {
    let sigma = 0.1;
    let (obs, psf, cfg) = instance(&[0.45, 0.45 + 0.5 * sigma], &[1.0, 1.0], 50, sigma);
    let opts = oracle_opts(&cfg, &obs, &psf);
    let res = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &opts).unwrap();
    assert_eq!(res.measure.len(), 2, "{res:?}");
    for (a, t) in res.measure.atoms.iter().zip(cfg.locations()) {
        assert!((a.location[0] - t[0]).abs() <= 1e-3, "{res:?}");
    }
}

#[test]
fn invalid_options() {
    let (obs, psf, _) = instance(&[0.5], &[1.0], 20, 0.1);
    let bad = SolverOptions { gap_tol: 0.0, ..SolverOptions::new(1.0) };
    assert!(solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &bad).is_err());
    assert!(solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &SolverOptions::new(-1.0)).is_err());
}

#[test]
fn min_decrease_stops_before_fitting_noise() {
    let (clean, psf, cfg) = instance(&[0.3, 0.7], &[1.0, 1.0], 100, 0.1);
    let obs = add_noise(&clean, 0.1, 3).unwrap();
    let base = oracle_opts(&cfg, &obs, &psf);
    let full = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &base).unwrap();
    let early_opts = SolverOptions { min_decrease_rel: 3e-3, ..base };
    let early = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &early_opts).unwrap();
    assert!(early.measure.len() <= full.measure.len());
    assert!(early.iterations <= full.iterations);
    assert!(early.objective_trace.last() >= full.objective_trace.last());
    let energy = obs.energy();
    for w in early.objective_trace.windows(2) {
        assert!(w[0] - w[1] >= 3e-3 * energy, "{:?}", early.objective_trace);
    }

    let bad = SolverOptions { min_decrease_rel: -1.0, ..base };
    assert!(solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &bad).is_err());
}

#[test]
fn soundness_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..20 {
        let k = rng.random_range(1..5);
        let locs: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let amps: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let (clean, psf, cfg) = instance(&locs, &amps, 80, 0.1);
        let noise = if case % 2 == 0 { 0.0 } else { 0.05 };
        let obs = add_noise(&clean, noise, rng.random()).unwrap();
        let tau = rng.random_range(0.5..1.5) * cfg.weighted_mass(&psf, &obs.sampling, Weighting::Sampled);
        let opts = SolverOptions::new(tau);
        let res = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &opts).unwrap();
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.final_gap >= -1e-12, "{}", res.final_gap);
        if res.converged {
            assert!(res.final_relative_gap <= opts.gap_tol);
        }
        assert!(res.measure.atoms.iter().all(|a| a.mass >= 0.0));
        assert!(res.measure.weighted_mass(&psf, &obs.sampling, Weighting::Sampled) <= tau * (1.0 + 1e-9));
        let again = solve(&obs, &psf, Weighting::Sampled, &Domain::unit(), &opts).unwrap();
        assert_eq!(res, again);
    }
}

#[test]
fn two_dimensional_pair() {
    let psf = Gaussian::new(0.05).unwrap();
    let d = Domain::<2>::unit();
    let sampling = SamplingMeasure::pixel_grid(20, 20, &d).unwrap();
    let cfg = SourceConfiguration::new(vec![[0.3, 0.4], [0.65, 0.7]], vec![1.0, 1.5]).unwrap();
    let obs = synthesize(&cfg, &psf, &sampling);
    let opts = SolverOptions::new(cfg.weighted_mass(&psf, &sampling, Weighting::Sampled));
    let res = solve(&obs, &psf, Weighting::Sampled, &d, &opts).unwrap();
    assert_eq!(res.measure.len(), 2, "{res:?}");
    for (a, t) in res.measure.atoms.iter().zip(cfg.locations()) {
        assert!(distance(&a.location, t) < 1e-5, "{res:?}");
    }
}
