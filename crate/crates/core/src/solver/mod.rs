//! Conditional-gradient solver for
//!
//! ```text
//! minimize   Σ_i (Σ_k c_k ψ(s_i, t_k) − x_i)²
//! subject to c_k ≥ 0,  Σ_k w(t_k) c_k ≤ τ
//! ```
//!
//! over atomic measures `Σ c_k δ_{t_k}` with free locations. Each iteration
//! adds the atom returned by a continuous linear minimization oracle,
//! re-solves all masses, jointly refines locations and masses, then prunes.

mod lmo;
mod mass;
mod refine;
#[cfg(test)]
mod tests;

pub use lmo::{lmo, lmo_score};
pub use mass::{fully_corrective, kkt_residual, project_capped_simplex};
pub use refine::{local_refine, merge_close};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Domain, Point, Psf, SamplingMeasure, Weighting};
use crate::simulate::ObservationSet;

use mass::MassProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom<const D: usize> {
    #[serde(with = "crate::model::serde_point")]
    pub location: Point<D>,
    pub mass: f64,
}

/// Estimated nonnegative atomic measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AtomicMeasure<const D: usize> {
    pub atoms: Vec<Atom<D>>,
}

impl<const D: usize> AtomicMeasure<D> {
    pub fn new(atoms: Vec<Atom<D>>) -> Result<Self> {
        if let Some(a) = atoms
            .iter()
            .find(|a| !(a.mass.is_finite() && a.mass >= 0.0) || a.location.iter().any(|x| !x.is_finite()))
        {
            return invalid(format!("atoms need finite locations and masses >= 0, got {a:?}"));
        }
        Ok(Self { atoms })
    }

    pub fn from_parts(locations: &[Point<D>], masses: &[f64]) -> Result<Self> {
        if locations.len() != masses.len() {
            return invalid("locations and masses differ in length");
        }
        Self::new(
            locations
                .iter()
                .zip(masses)
                .map(|(&location, &mass)| Atom { location, mass })
                .collect(),
        )
    }

    pub fn empty() -> Self {
        Self { atoms: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn locations(&self) -> Vec<Point<D>> {
        self.atoms.iter().map(|a| a.location).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    /// `∫ w dμ`.
    pub fn weighted_mass<P: Psf<D>>(&self, psf: &P, sampling: &SamplingMeasure<D>, weighting: Weighting) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * weighting.eval(psf, sampling, &a.location))
            .sum()
    }

    /// `Σ_k c_k ψ(s_i, t_k)` at every sample.
    pub fn model<P: Psf<D>>(&self, psf: &P, sampling: &SamplingMeasure<D>) -> Vec<f64> {
        sampling
            .points()
            .iter()
            .map(|s| self.atoms.iter().map(|a| a.mass * psf.eval(s, &a.location)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Budget `τ` on `∫ w dμ`.
    pub tau: f64,
    /// Coarse LMO grid size as a multiple of the sample count.
    pub grid_oversample: usize,
    pub max_iters: usize,
    /// Stop once the duality gap divided by `Σ x²` falls below this.
    pub gap_tol: f64,
    /// LMO refinement tolerance relative to the domain extent.
    pub refine_tol_rel: f64,
    /// Merge radius relative to the domain extent.
    pub merge_tol_rel: f64,
    /// Atoms lighter than this fraction of the heaviest atom are pruned.
    pub prune_tol_rel: f64,
    /// Damped Gauss-Newton steps per local refinement.
    pub refine_iters: usize,
    /// Stop, keeping the previous iterate, once an iteration lowers the
    /// objective by less than this fraction of `Σ x²`. Zero disables it;
    /// with noisy data it keeps the solver from fitting noise with many
    /// tiny atoms.
    pub min_decrease_rel: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tau: 1.0,
            grid_oversample: 10,
            max_iters: 100,
            gap_tol: 1e-9,
            refine_tol_rel: 1e-12,
            merge_tol_rel: 1e-6,
            prune_tol_rel: 1e-7,
            refine_iters: 50,
            min_decrease_rel: 0.0,
        }
    }
}

impl SolverOptions {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return invalid(format!("tau must be finite and >= 0, got {}", self.tau));
        }
        if self.grid_oversample == 0 || self.max_iters == 0 {
            return invalid("grid_oversample and max_iters must be >= 1");
        }
        for (name, v) in [
            ("gap_tol", self.gap_tol),
            ("refine_tol_rel", self.refine_tol_rel),
            ("merge_tol_rel", self.merge_tol_rel),
            ("prune_tol_rel", self.prune_tol_rel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.min_decrease_rel.is_finite() && self.min_decrease_rel >= 0.0) {
            return invalid(format!("min_decrease_rel must be finite and >= 0, got {}", self.min_decrease_rel));
        }
        Ok(())
    }

    pub fn refine_tol<const D: usize>(&self, domain: &Domain<D>) -> f64 {
        self.refine_tol_rel * domain.extent()
    }

    pub fn merge_tol<const D: usize>(&self, domain: &Domain<D>) -> f64 {
        self.merge_tol_rel * domain.extent()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult<const D: usize> {
    pub measure: AtomicMeasure<D>,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub final_gap: f64,
    /// `final_gap / Σ x²`.
    pub final_relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything about an instance except the budget and tuning knobs.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, const D: usize, P> {
    pub obs: &'a ObservationSet<D>,
    pub psf: &'a P,
    pub weighting: Weighting,
    pub domain: Domain<D>,
}

impl<'a, const D: usize, P: Psf<D>> Problem<'a, D, P> {
    pub fn new(obs: &'a ObservationSet<D>, psf: &'a P, weighting: Weighting, domain: Domain<D>) -> Self {
        Self {
            obs,
            psf,
            weighting,
            domain,
        }
    }
}

/// `Σ_i (model_i − x_i)²` with unit sample weights.
pub fn objective<const D: usize, P: Psf<D>>(measure: &AtomicMeasure<D>, obs: &ObservationSet<D>, psf: &P) -> f64 {
    measure
        .model(psf, &obs.sampling)
        .iter()
        .zip(&obs.values)
        .map(|(m, x)| (m - x) * (m - x))
        .sum()
}

/// `r_i = 2(model_i − x_i)`, the gradient of the loss in observation space.
pub fn residual_gradient<const D: usize, P: Psf<D>>(
    measure: &AtomicMeasure<D>,
    obs: &ObservationSet<D>,
    psf: &P,
) -> Vec<f64> {
    measure
        .model(psf, &obs.sampling)
        .iter()
        .zip(&obs.values)
        .map(|(m, x)| 2.0 * (m - x))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapInfo<const D: usize> {
    pub gap: f64,
    pub lmo_location: Point<D>,
    pub lmo_score: f64,
}

fn gap_from<const D: usize, P: Psf<D>>(
    measure: &AtomicMeasure<D>,
    problem: &Problem<'_, D, P>,
    tau: f64,
    opts: &SolverOptions,
) -> Result<GapInfo<D>> {
    let model = measure.model(problem.psf, &problem.obs.sampling);
    let r: Vec<f64> = model.iter().zip(&problem.obs.values).map(|(m, x)| 2.0 * (m - x)).collect();
    let (t, s) = lmo(&r, problem.psf, &problem.obs.sampling, problem.weighting, &problem.domain, opts)?;
    let inner: f64 = r.iter().zip(&model).map(|(a, b)| a * b).sum();
    Ok(GapInfo {
        gap: inner - (tau * s).min(0.0),
        lmo_location: t,
        lmo_score: s,
    })
}

/// Frank-Wolfe gap `⟨r, model⟩ − min(0, τ·score*)`; an upper bound on the
/// suboptimality of `measure`.
pub fn duality_gap<const D: usize, P: Psf<D>>(
    measure: &AtomicMeasure<D>,
    problem: &Problem<'_, D, P>,
    opts: &SolverOptions,
) -> Result<f64> {
    opts.validate()?;
    Ok(gap_from(measure, problem, opts.tau, opts)?.gap)
}

fn relative(gap: f64, energy: f64) -> f64 {
    if energy > 0.0 {
        gap / energy
    } else {
        gap.max(0.0)
    }
}

/// Drops atoms with exactly zero mass (leaves the model bit-identical), then
/// tries dropping atoms below the prune threshold, keeping the result only if
/// the re-optimized objective does not increase.
fn prune<const D: usize, P: Psf<D>>(
    measure: AtomicMeasure<D>,
    problem: &Problem<'_, D, P>,
    tau: f64,
    opts: &SolverOptions,
) -> AtomicMeasure<D> {
    let mut measure = measure;
    measure.atoms.retain(|a| a.mass > 0.0);
    let max_mass = measure.atoms.iter().map(|a| a.mass).fold(0.0, f64::max);
    let thresh = opts.prune_tol_rel * max_mass;
    if !measure.atoms.iter().any(|a| a.mass < thresh) {
        return measure;
    }
    let kept: Vec<Atom<D>> = measure.atoms.iter().copied().filter(|a| a.mass >= thresh).collect();
    let locs: Vec<Point<D>> = kept.iter().map(|a| a.location).collect();
    let mp = MassProblem::new(&locs, problem.obs, problem.psf, problem.weighting, tau);
    let masses: Vec<f64> = kept.iter().map(|a| a.mass).collect();
    let u = mp.minimize(mp.to_u(&masses));
    let Ok(mut trial) = AtomicMeasure::from_parts(&locs, &mp.to_masses(&u)) else {
        return measure;
    };
    trial.atoms.retain(|a| a.mass > 0.0);
    if objective(&trial, problem.obs, problem.psf) <= objective(&measure, problem.obs, problem.psf) {
        trial
    } else {
        measure
    }
}

/// Runs the conditional-gradient loop until the relative gap drops below
/// `gap_tol`, an iteration fails to decrease the objective by more than
/// `min_decrease_rel · Σ x²`, or `max_iters` is reached.
pub fn solve<const D: usize, P: Psf<D>>(
    obs: &ObservationSet<D>,
    psf: &P,
    weighting: Weighting,
    domain: &Domain<D>,
    opts: &SolverOptions,
) -> Result<SolveResult<D>> {
    opts.validate()?;
    let problem = Problem::new(obs, psf, weighting, *domain);
    let tau = opts.tau;
    let energy = obs.energy();
    let merge_tol = opts.merge_tol(domain);

    let mut measure = AtomicMeasure::empty();
    let mut obj = energy;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut info = gap_from(&measure, &problem, tau, opts)?;

    for _ in 0..opts.max_iters {
        if relative(info.gap, energy) <= opts.gap_tol {
            converged = true;
            break;
        }
        let mut locs = measure.locations();
        let mut masses = measure.masses();
        if info.lmo_score < 0.0
            && !locs
                .iter()
                .any(|t| crate::model::distance(t, &info.lmo_location) < merge_tol)
        {
            locs.push(info.lmo_location);
            masses.push(0.0);
        }
        let mp = MassProblem::new(&locs, obs, psf, weighting, tau);
        let u = mp.minimize(mp.to_u(&masses));
        let candidate = AtomicMeasure::from_parts(&locs, &mp.to_masses(&u))?;
        let candidate = local_refine(&candidate, &problem, opts)?;
        let candidate = prune(candidate, &problem, tau, opts);

        let new_obj = objective(&candidate, obs, psf);
        if !(new_obj < obj) || obj - new_obj < opts.min_decrease_rel * energy {
            break;
        }
        measure = candidate;
        obj = new_obj;
        trace.push(obj);
        info = gap_from(&measure, &problem, tau, opts)?;
    }
    if !converged && relative(info.gap, energy) <= opts.gap_tol {
        converged = true;
    }

    Ok(SolveResult {
        measure,
        final_gap: info.gap,
        final_relative_gap: relative(info.gap, energy),
        iterations: trace.len(),
        objective_trace: trace,
        converged,
    })
}
