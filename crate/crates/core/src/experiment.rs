//! Population-level runs: solve every image of a population, score it
//! against the truth and aggregate.
//!
//! Every image is solved independently, so runs are spread over a thread pool
//! and gathered back in input order; outputs do not depend on the pool size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::eval::score;
use crate::model::{Domain, Psf, Weighting};
use crate::simulate::{gen_population, gen_smlm2d, PopulationItem, PopulationSpec, Smlm2dSpec};
use crate::solver::{solve, AtomicMeasure, SolverOptions};

/// `min_decrease_rel` used for noisy experiments. With noise the exact
/// optimum carries many tiny atoms that fit the noise; stopping once an
/// iteration gains less than this fraction of `Σ x²` leaves them out.
pub const NOISY_MIN_DECREASE_REL: f64 = 3e-3;

/// How the mass budget `τ` is chosen for each image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum TauPolicy {
    /// `τ = Σ w(t_i) c_i` of the true sources.
    Oracle,
    /// The same `τ` for every image.
    Fixed { tau: f64 },
    /// `τ = f · oracle` for `points` factors `f` spaced logarithmically in
    /// `[lo, hi]`; the factor with the best mean F-score over the population
    /// is kept.
    Scan { points: usize, lo: f64, hi: f64 },
}

impl TauPolicy {
    pub const DEFAULT_SCAN: TauPolicy = TauPolicy::Scan {
        points: 15,
        lo: 0.1,
        hi: 10.0,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            TauPolicy::Oracle => Ok(()),
            TauPolicy::Fixed { tau } if tau.is_finite() && tau >= 0.0 => Ok(()),
            TauPolicy::Fixed { tau } => invalid(format!("tau must be finite and >= 0, got {tau}")),
            TauPolicy::Scan { points, lo, hi } => {
                if points == 0 {
                    return invalid("tau scan needs at least one point");
                }
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                    return invalid(format!("tau scan range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
                }
                Ok(())
            }
        }
    }

    /// Multipliers applied to the oracle budget; empty for a fixed budget.
    pub fn factors(&self) -> Vec<f64> {
        match *self {
            TauPolicy::Oracle => vec![1.0],
            TauPolicy::Fixed { .. } => Vec::new(),
            TauPolicy::Scan { points: 1, lo, .. } => vec![lo],
            TauPolicy::Scan { points, lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                (0..points)
                    .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub weighting: Weighting,
    pub tau: TauPolicy,
    /// Tolerance radius for matching estimates to true sources.
    pub radius: f64,
    pub solver: SolverOptions,
}

impl RunSettings {
    pub fn new(weighting: Weighting, tau: TauPolicy, radius: f64) -> Self {
        Self {
            weighting,
            tau,
            radius,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return invalid(format!("tolerance radius must be > 0, got {}", self.radius));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult<const D: usize> {
    pub index: usize,
    pub truth: crate::model::SourceConfiguration<D>,
    pub estimate: AtomicMeasure<D>,
    pub tau: f64,
    pub f_score: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRun<const D: usize> {
    /// Oracle multiplier used; `None` for a fixed budget.
    pub tau_factor: Option<f64>,
    /// Mean F-score for every scanned factor, in scan order.
    pub scan: Vec<(f64, f64)>,
    pub images: Vec<ImageResult<D>>,
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_images: usize,
    pub mean_f: f64,
    pub median_f: f64,
    /// Population standard deviation (divides by `n`).
    pub std_f: f64,
}

impl Summary {
    pub fn from_scores(scores: &[f64]) -> Self {
        let n = scores.len();
        if n == 0 {
            return Self {
                n_images: 0,
                mean_f: f64::NAN,
                median_f: f64::NAN,
                std_f: f64::NAN,
            };
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n as f64;
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            n_images: n,
            mean_f: mean,
            median_f: median,
            std_f: var.sqrt(),
        }
    }
}

fn solve_image<const D: usize, P: Psf<D> + Sync>(
    index: usize,
    item: &PopulationItem<D>,
    psf: &P,
    domain: &Domain<D>,
    settings: &RunSettings,
    tau: f64,
) -> Result<ImageResult<D>> {
    let mut opts = settings.solver;
    opts.tau = tau;
    let res = solve(&item.obs, psf, settings.weighting, domain, &opts)?;
    let f = score(item.truth.locations(), &res.measure.locations(), settings.radius)?;
    Ok(ImageResult {
        index,
        truth: item.truth.clone(),
        objective: res.objective_trace.last().copied().unwrap_or_else(|| item.obs.energy()),
        estimate: res.measure,
        tau,
        f_score: f,
        iterations: res.iterations,
        converged: res.converged,
    })
}

fn solve_all<const D: usize, P: Psf<D> + Sync>(
    items: &[PopulationItem<D>],
    psf: &P,
    domain: &Domain<D>,
    settings: &RunSettings,
    taus: &[f64],
) -> Result<Vec<ImageResult<D>>> {
    items
        .par_iter()
        .zip(taus)
        .enumerate()
        .map(|(i, (item, &tau))| solve_image(i, item, psf, domain, settings, tau))
        .collect()
}

/// Solves and scores every item under `settings`.
pub fn run_population<const D: usize, P: Psf<D> + Sync>(
    items: &[PopulationItem<D>],
    psf: &P,
    domain: &Domain<D>,
    settings: &RunSettings,
) -> Result<PopulationRun<D>> {
    settings.validate()?;
    if let TauPolicy::Fixed { tau } = settings.tau {
        let taus = vec![tau; items.len()];
        let images = solve_all(items, psf, domain, settings, &taus)?;
        let scores: Vec<f64> = images.iter().map(|r| r.f_score).collect();
        return Ok(PopulationRun {
            tau_factor: None,
            scan: Vec::new(),
            summary: Summary::from_scores(&scores),
            images,
        });
    }
    let oracle: Vec<f64> = items
        .iter()
        .map(|it| it.truth.weighted_mass(psf, &it.obs.sampling, settings.weighting))
        .collect();
    let mut best: Option<(f64, Vec<ImageResult<D>>, Summary)> = None;
    let mut scan = Vec::new();
    for factor in settings.tau.factors() {
        let taus: Vec<f64> = oracle.iter().map(|t| factor * t).collect();
        let images = solve_all(items, psf, domain, settings, &taus)?;
        let scores: Vec<f64> = images.iter().map(|r| r.f_score).collect();
        let summary = Summary::from_scores(&scores);
        scan.push((factor, summary.mean_f));
        if best.as_ref().is_none_or(|b| summary.mean_f > b.2.mean_f) {
            best = Some((factor, images, summary));
        }
    }
    let (factor, images, summary) = best.expect("at least one factor");
    Ok(PopulationRun {
        tau_factor: Some(factor),
        scan,
        images,
        summary,
    })
}

/// Generates a 1D population and runs it on the unit interval.
pub fn run_spec(spec: &PopulationSpec, settings: &RunSettings) -> Result<PopulationRun<1>> {
    let items = gen_population(spec)?;
    run_population(&items, &spec.psf()?, &Domain::unit(), settings)
}

/// Generates 2D frames and runs them on the unit square. Scoring uses
/// `settings.radius`, usually a third of a pixel.
pub fn run_smlm2d(spec: &Smlm2dSpec, settings: &RunSettings) -> Result<PopulationRun<2>> {
    let items = gen_smlm2d(spec)?;
    run_population(&items, &spec.psf()?, &Domain::unit(), settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub mean_f: f64,
    pub std_f: f64,
    pub n_images: usize,
}

/// One population run per sweep value; `spec_for` builds the population.
pub fn run_sweep(
    values: &[f64],
    spec_for: impl Fn(f64) -> Result<PopulationSpec>,
    settings: &RunSettings,
) -> Result<Vec<(SweepRow, PopulationRun<1>)>> {
    values
        .iter()
        .map(|&v| {
            let run = run_spec(&spec_for(v)?, settings)?;
            let row = SweepRow {
                sweep_value: v,
                mean_f: run.summary.mean_f,
                std_f: run.summary.std_f,
                n_images: run.summary.n_images,
            };
            Ok((row, run))
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties; `NaN` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::PopulationKind;

    fn pair_spec(separation: f64, count: usize) -> PopulationSpec {
        PopulationSpec {
            kind: PopulationKind::Pair { separation },
            count,
            sigma: 0.1,
            n: 50,
            noise_sigma: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn scan_factors_are_logarithmic() {
        let f = TauPolicy::DEFAULT_SCAN.factors();
        assert_eq!(f.len(), 15);
        assert!((f[0] - 0.1).abs() < 1e-15);
        assert!((f[14] - 10.0).abs() < 1e-12);
        assert!((f[7] - 1.0).abs() < 1e-12);
        assert!(TauPolicy::Scan { points: 0, lo: 1.0, hi: 2.0 }.validate().is_err());
        assert!(TauPolicy::Scan { points: 3, lo: 2.0, hi: 1.0 }.validate().is_err());
        assert!(TauPolicy::Fixed { tau: -1.0 }.validate().is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::from_scores(&[1.0, 0.5, 0.0, 0.5]);
        assert_eq!(s.n_images, 4);
        assert!((s.mean_f - 0.5).abs() < 1e-15);
        assert!((s.median_f - 0.5).abs() < 1e-15);
        assert!((s.std_f - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).is_nan());
        // Ties share their average rank.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.5, 1.0, 1.0, 1.0]);
        assert!((r - 0.774_596_669_241_483_4).abs() < 1e-12, "{r}");
    }

    #[test]
    fn well_separated_pairs_are_recovered() {
        let settings = RunSettings::new(Weighting::Sampled, TauPolicy::Oracle, 0.1);
        let run = run_spec(&pair_spec(0.1, 4), &settings).unwrap();
        assert_eq!(run.images.len(), 4);
        assert_eq!(run.summary.mean_f, 1.0);
        assert_eq!(run.tau_factor, Some(1.0));
    }

    #[test]
    fn zero_budget_gives_empty_estimates() {
        let settings = RunSettings::new(Weighting::Sampled, TauPolicy::Fixed { tau: 0.0 }, 0.1);
        let run = run_spec(&pair_spec(0.1, 3), &settings).unwrap();
        assert!(run.images.iter().all(|r| r.estimate.is_empty() && r.f_score == 0.0));
        assert_eq!(run.tau_factor, None);
    }

    #[test]
    fn results_independent_of_pool_size() {
        let settings = RunSettings::new(Weighting::Sampled, TauPolicy::Oracle, 0.05);
        let spec = pair_spec(0.03, 4);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_spec(&spec, &settings)).unwrap();
        let b = three.install(|| run_spec(&spec, &settings)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregates_match_per_image_scores() {
        let mut spec = pair_spec(0.05, 5);
        spec.noise_sigma = 0.05;
        let settings = RunSettings::new(Weighting::Sampled, TauPolicy::Scan { points: 3, lo: 0.5, hi: 2.0 }, 0.1);
        let run = run_spec(&spec, &settings).unwrap();
        let scores: Vec<f64> = run.images.iter().map(|r| r.f_score).collect();
        let s = Summary::from_scores(&scores);
        assert!((s.mean_f - run.summary.mean_f).abs() <= 1e-12);
        assert_eq!(run.scan.len(), 3);
        let best = run.scan.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, run.summary.mean_f);
    }

    #[test]
    fn sweep_rows_follow_values() {
        let settings = RunSettings::new(Weighting::Sampled, TauPolicy::Oracle, 0.1);
        let rows = run_sweep(&[0.1], |d| Ok(pair_spec(d, 2)), &settings).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0.sweep_value, 0.1);
        assert_eq!(rows[0].0.n_images, 2);
    }
}
