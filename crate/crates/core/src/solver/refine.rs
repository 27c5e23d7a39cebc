use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{distance, lex_cmp, Point, Psf};

use super::mass::MassProblem;
use super::{objective, Atom, AtomicMeasure, Problem, SolverOptions};

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;

/// Merges atoms closer than `tol`: masses add up and the location becomes the
/// mass-weighted mean (plain mean when all masses are zero).
pub fn merge_close<const D: usize>(measure: &AtomicMeasure<D>, tol: f64) -> AtomicMeasure<D> {
    let mut atoms = measure.atoms.clone();
    atoms.sort_by(|a, b| lex_cmp(&a.location, &b.location));
    let mut out: Vec<(Atom<D>, usize)> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.iter_mut().find(|(b, _)| distance(&b.location, &a.location) < tol) {
            Some((b, count)) => {
                let m = b.mass + a.mass;
                for k in 0..D {
                    b.location[k] = if m > 0.0 {
                        (b.location[k] * b.mass + a.location[k] * a.mass) / m
                    } else {
                        (b.location[k] * *count as f64 + a.location[k]) / (*count + 1) as f64
                    };
                }
                b.mass = m;
                *count += 1;
            }
            None => out.push((a, 1)),
        }
    }
    AtomicMeasure {
        atoms: out.into_iter().map(|(a, _)| a).collect(),
    }
}

fn too_close<const D: usize>(locs: &[Point<D>], tol: f64) -> bool {
    locs.iter()
        .enumerate()
        .any(|(i, a)| locs[i + 1..].iter().any(|b| distance(a, b) < tol))
}

/// Jacobian of the residual `model − x` with respect to
/// `(t_1, c_1, t_2, c_2, …)`.
fn jacobian<const D: usize, P: Psf<D>>(
    locs: &[Point<D>],
    masses: &[f64],
    problem: &Problem<'_, D, P>,
) -> (DMatrix<f64>, DVector<f64>) {
    let pts = problem.obs.sampling.points();
    let n = pts.len();
    let k = locs.len();
    let mut j = DMatrix::zeros(n, k * (D + 1));
    let mut e = DVector::from_iterator(n, problem.obs.values.iter().map(|x| -x));
    for (a, (t, c)) in locs.iter().zip(masses).enumerate() {
        let col = a * (D + 1);
        for (i, s) in pts.iter().enumerate() {
            let v = problem.psf.eval(s, t);
            let g = problem.psf.grad_t(s, t);
            for d in 0..D {
                j[(i, col + d)] = c * g[d];
            }
            j[(i, col + D)] = v;
            e[i] += c * v;
        }
    }
    (j, e)
}

/// Damped Gauss-Newton refinement of locations and masses.
///
/// Each trial moves the locations along the joint step, clamps them to the
/// domain and re-solves the masses under the budget at the new locations,
/// so every accepted iterate is feasible and strictly improves the loss.
/// Atoms closer than the merge radius are merged before and after.
pub fn local_refine<const D: usize, P: Psf<D>>(
    measure: &AtomicMeasure<D>,
    problem: &Problem<'_, D, P>,
    opts: &SolverOptions,
) -> Result<AtomicMeasure<D>> {
    opts.validate()?;
    let tau = opts.tau;
    let domain = &problem.domain;
    let merge_tol = opts.merge_tol(domain);

    let mut current = merge_close(measure, merge_tol);
    current.atoms.retain(|a| a.mass > 0.0);
    if current.is_empty() {
        return Ok(current);
    }
    let mut locs = current.locations();
    let mut masses = current.masses();
    {
        let mp = MassProblem::new(&locs, problem.obs, problem.psf, problem.weighting, tau);
        let mut u = mp.to_u(&masses);
        super::mass::project_capped_simplex(u.as_mut_slice(), tau);
        masses = mp.to_masses(&u);
    }
    let mut obj = objective(&AtomicMeasure::from_parts(&locs, &masses)?, problem.obs, problem.psf);

    let k = locs.len();
    let p = k * (D + 1);
    let mut lambda = 1e-3;
    for _ in 0..opts.refine_iters {
        let (j, e) = jacobian(&locs, &masses, problem);
        let jtj = j.tr_mul(&j);
        let jte = j.tr_mul(&e);
        if jte.amax() == 0.0 {
            break;
        }
        let ridge = 1e-14 * (0..p).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * (jtj[(i, i)] + ridge);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jte));
            let trial_locs: Vec<Point<D>> = locs
                .iter()
                .enumerate()
                .map(|(a, t)| domain.clamp(&std::array::from_fn(|d| t[d] + step[a * (D + 1) + d])))
                .collect();
            if too_close(&trial_locs, merge_tol) {
                lambda *= 4.0;
                continue;
            }
            let mp = MassProblem::new(&trial_locs, problem.obs, problem.psf, problem.weighting, tau);
            let start: Vec<f64> = masses
                .iter()
                .enumerate()
                .map(|(a, c)| (c + step[a * (D + 1) + D]).max(0.0))
                .collect();
            let u = mp.minimize(mp.to_u(&start));
            let trial_masses = mp.to_masses(&u);
            let trial = AtomicMeasure::from_parts(&trial_locs, &trial_masses)?;
            let trial_obj = objective(&trial, problem.obs, problem.psf);
            if trial_obj < obj {
                let moved = locs
                    .iter()
                    .zip(&trial_locs)
                    .map(|(a, b)| distance(a, b))
                    .fold(0.0, f64::max);
                accepted = Some((trial_locs, trial_masses, trial_obj, moved));
                lambda = (lambda / 3.0).max(LAMBDA_MIN);
                break;
            }
            lambda *= 4.0;
        }
        let Some((l, m, o, moved)) = accepted else {
            break;
        };
        let gain = obj - o;
        locs = l;
        masses = m;
        obj = o;
        if moved <= opts.refine_tol(domain) && gain <= 1e-15 * obj {
            break;
        }
    }

    let mut out = merge_close(&AtomicMeasure::from_parts(&locs, &masses)?, merge_tol);
    if out.len() < k {
        let locs = out.locations();
        let mp = MassProblem::new(&locs, problem.obs, problem.psf, problem.weighting, tau);
        let u = mp.minimize(mp.to_u(&out.masses()));
        out = AtomicMeasure::from_parts(&locs, &mp.to_masses(&u))?;
    }
    Ok(out)
}
