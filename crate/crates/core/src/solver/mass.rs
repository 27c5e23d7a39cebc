//! Mass re-optimization over a fixed support.
//!
//! With `u_k = w(t_k) c_k` the feasible set becomes the capped simplex
//! `{u ≥ 0, Σ u ≤ τ}`, which has a cheap exact projection. The quadratic is
//! minimized by FISTA with adaptive restart and then polished by solving the
//! KKT system on the detected support.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::model::{Point, Psf, Weighting};
use crate::simulate::ObservationSet;

const FISTA_MAX_ITERS: usize = 5000;
pub(crate) const KKT_TOL: f64 = 1e-10;

/// Euclidean projection onto `{u ≥ 0, Σ u ≤ τ}`.
pub fn project_capped_simplex(v: &mut [f64], tau: f64) {
    let clipped: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if clipped <= tau {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        return;
    }
    let mut sorted: Vec<f64> = v.iter().copied().filter(|x| *x > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = sorted[0];
    let mut theta = sorted[0] - tau;
    for (j, &x) in sorted.iter().enumerate().skip(1) {
        cum += x;
        let th = (cum - tau) / (j + 1) as f64;
        if x - th > 0.0 {
            theta = th;
        } else {
            break;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// `f(u) = uᵀGu − 2bᵀu + ‖x‖²` in the rescaled variables.
pub(crate) struct MassProblem {
    g: DMatrix<f64>,
    b: DVector<f64>,
    xx: f64,
    pub(crate) w: Vec<f64>,
    tau: f64,
}

impl MassProblem {
    pub(crate) fn new<const D: usize, P: Psf<D>>(
        locations: &[Point<D>],
        obs: &ObservationSet<D>,
        psf: &P,
        weighting: Weighting,
        tau: f64,
    ) -> Self {
        let k = locations.len();
        let n = obs.values.len();
        let w: Vec<f64> = locations
            .iter()
            .map(|t| weighting.eval(psf, &obs.sampling, t))
            .collect();
        let cols = DMatrix::from_fn(n, k, |i, j| {
            psf.eval(&obs.sampling.points()[i], &locations[j]) / w[j]
        });
        let x = DVector::from_column_slice(&obs.values);
        Self {
            g: cols.tr_mul(&cols),
            b: cols.tr_mul(&x),
            xx: x.norm_squared(),
            w,
            tau,
        }
    }

    pub(crate) fn value(&self, u: &DVector<f64>) -> f64 {
        (&self.g * u).dot(u) - 2.0 * self.b.dot(u) + self.xx
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        (&self.g * u - &self.b) * 2.0
    }

    fn project(&self, v: &mut DVector<f64>) {
        project_capped_simplex(v.as_mut_slice(), self.tau);
    }

    /// `‖u − Π(u − ∇f(u))‖_∞`, zero exactly at a KKT point.
    pub(crate) fn kkt(&self, u: &DVector<f64>) -> f64 {
        let mut v = u - self.grad(u);
        self.project(&mut v);
        (u - v).amax()
    }

    fn fista(&self, u0: DVector<f64>) -> DVector<f64> {
        let lmax = self.g.clone().symmetric_eigenvalues().max();
        let mut u = u0;
        self.project(&mut u);
        if !(lmax > 0.0) {
            return u;
        }
        let step = 1.0 / (2.0 * lmax * (1.0 + 1e-12));
        let mut best = u.clone();
        let mut fbest = self.value(&u);
        let mut y = u.clone();
        let mut t = 1.0f64;
        for _ in 0..FISTA_MAX_ITERS {
            let mut next = &y - self.grad(&y) * step;
            self.project(&mut next);
            let f = self.value(&next);
            if f < fbest {
                fbest = f;
                best.copy_from(&next);
            }
            if self.kkt(&next) <= KKT_TOL {
                break;
            }
            if (&y - &next).dot(&(&next - &u)) > 0.0 {
                t = 1.0;
                y.copy_from(&next);
            } else {
                let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &next + (&next - &u) * ((t - 1.0) / tn);
                t = tn;
            }
            u = next;
        }
        best
    }

    /// Solves the equality-constrained quadratic on `support`, with the budget
    /// either free or tight.
    fn solve_on_support(&self, support: &[usize], tight: bool) -> Option<DVector<f64>> {
        let s = support.len();
        if s == 0 {
            return Some(DVector::zeros(self.b.len()));
        }
        let dim = if tight { s + 1 } else { s };
        let mut a = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (i, &p) in support.iter().enumerate() {
            for (j, &q) in support.iter().enumerate() {
                a[(i, j)] = 2.0 * self.g[(p, q)];
            }
            rhs[i] = 2.0 * self.b[p];
            if tight {
                a[(i, s)] = 1.0;
                a[(s, i)] = 1.0;
            }
        }
        if tight {
            rhs[s] = self.tau;
        }
        let sol = a.lu().solve(&rhs)?;
        let mut u = DVector::zeros(self.b.len());
        for (i, &p) in support.iter().enumerate() {
            u[p] = sol[i];
        }
        Some(u)
    }

    fn polish(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let mut support: Vec<usize> = (0..u.len()).filter(|&i| u[i] > 0.0).collect();
        let tight = u.sum() >= self.tau * (1.0 - 1e-9);
        while !support.is_empty() {
            let cand = self.solve_on_support(&support, tight)?;
            if !cand.iter().all(|x| x.is_finite()) {
                return None;
            }
            match support
                .iter()
                .copied()
                .filter(|&p| cand[p] <= 0.0)
                .min_by(|&a, &b| cand[a].total_cmp(&cand[b]))
            {
                None => {
                    let mut c = cand;
                    self.project(&mut c);
                    return Some(c);
                }
                Some(worst) => support.retain(|&p| p != worst),
            }
        }
        Some(DVector::zeros(u.len()))
    }

    /// Minimizer in `u`, warm-started from `u0`; never worse than `u0`.
    pub(crate) fn minimize(&self, u0: DVector<f64>) -> DVector<f64> {
        let mut start = u0.clone();
        self.project(&mut start);
        let f0 = self.value(&start);
        if let Some(p) = self.polish(&start) {
            if self.kkt(&p) <= KKT_TOL && self.value(&p) <= f0 {
                return p;
            }
        }
        let fista = self.fista(u0);
        let mut best = if self.value(&fista) <= f0 { fista } else { start };
        if let Some(p) = self.polish(&best) {
            let (fp, fb) = (self.value(&p), self.value(&best));
            let better_value = fp < fb;
            let tie_but_cleaner = fp <= fb + 1e-14 * self.xx.max(1.0) && self.kkt(&p) < self.kkt(&best);
            if better_value || tie_but_cleaner {
                best = p;
            }
        }
        best
    }

    pub(crate) fn to_masses(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter().zip(&self.w).map(|(u, w)| u / w).collect()
    }

    pub(crate) fn to_u(&self, c: &[f64]) -> DVector<f64> {
        DVector::from_iterator(c.len(), c.iter().zip(&self.w).map(|(c, w)| c * w))
    }
}

fn check_budget(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return invalid(format!("mass budget must be finite and >= 0, got {tau}"));
    }
    Ok(())
}

/// Optimal masses `c ≥ 0` with `Σ w(t_k) c_k ≤ τ` for fixed locations.
pub fn fully_corrective<const D: usize, P: Psf<D>>(
    locations: &[Point<D>],
    obs: &ObservationSet<D>,
    psf: &P,
    weighting: Weighting,
    tau: f64,
) -> Result<Vec<f64>> {
    check_budget(tau)?;
    for (i, a) in locations.iter().enumerate() {
        if locations[i + 1..].contains(a) {
            return invalid(format!("duplicate atom location {a:?}"));
        }
    }
    if locations.is_empty() {
        return Ok(Vec::new());
    }
    let mp = MassProblem::new(locations, obs, psf, weighting, tau);
    let u = mp.minimize(DVector::zeros(locations.len()));
    Ok(mp.to_masses(&u))
}

/// Projected-gradient residual of the mass subproblem at `masses`.
pub fn kkt_residual<const D: usize, P: Psf<D>>(
    locations: &[Point<D>],
    masses: &[f64],
    obs: &ObservationSet<D>,
    psf: &P,
    weighting: Weighting,
    tau: f64,
) -> f64 {
    let mp = MassProblem::new(locations, obs, psf, weighting, tau);
    mp.kkt(&mp.to_u(masses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{weight, Gaussian, SamplingMeasure, SourceConfiguration};
    use crate::simulate::synthesize;
    use proptest::prelude::*;

    fn setup(locs: &[f64], amps: &[f64]) -> (ObservationSet<1>, Gaussian) {
        let psf = Gaussian::new(0.1).unwrap();
        let sampling = SamplingMeasure::uniform_grid(100, 0.0, 1.0).unwrap();
        let cfg = SourceConfiguration::new(locs.iter().map(|&t| [t]).collect(), amps.to_vec()).unwrap();
        (synthesize(&cfg, &psf, &sampling), psf)
    }

    #[test]
    fn projection_cases() {
        let mut v = [0.2, -1.0, 0.3];
        project_capped_simplex(&mut v, 1.0);
        assert_eq!(v, [0.2, 0.0, 0.3]);
        let mut v = [2.0, 1.0, -3.0];
        project_capped_simplex(&mut v, 1.0);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let mut v = [1.0, 1.0];
        project_capped_simplex(&mut v, 1.0);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [3.0, 2.0];
        project_capped_simplex(&mut v, 0.0);
        assert_eq!(v, [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_optimal(
            v in proptest::collection::vec(-3.0f64..3.0, 1..8),
            tau in 0.0f64..4.0,
        ) {
            let mut p = v.clone();
            project_capped_simplex(&mut p, tau);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!(p.iter().sum::<f64>() <= tau * (1.0 + 1e-12) + 1e-12);
            // Variational inequality: <v - p, q - p> <= 0 for feasible q.
            let k = v.len();
            for j in 0..k {
                let mut q = vec![0.0; k];
                q[j] = tau;
                let ip: f64 = (0..k).map(|i| (v[i] - p[i]) * (q[i] - p[i])).sum();
                prop_assert!(ip <= 1e-9);
            }
            let ip0: f64 = (0..k).map(|i| (v[i] - p[i]) * (-p[i])).sum();
            prop_assert!(ip0 <= 1e-9);
        }
    }

    #[test]
    fn single_atom_recovers_amplitude() {
        let (obs, psf) = setup(&[0.5], &[1.3]);
        let w = weight(&psf, &obs.sampling, &[0.5]);
        let c = fully_corrective(&[[0.5]], &obs, &psf, Weighting::Sampled, 2.0 * w).unwrap();
        assert!((c[0] - 1.3).abs() <= 1e-8, "{}", c[0]);
        // Budget exactly at the truth.
        let c = fully_corrective(&[[0.5]], &obs, &psf, Weighting::Sampled, 1.3 * w).unwrap();
        assert!((c[0] - 1.3).abs() <= 1e-8, "{}", c[0]);
    }

    #[test]
    fn budget_caps_mass() {
        let (obs, psf) = setup(&[0.5], &[1.0]);
        let w = weight(&psf, &obs.sampling, &[0.5]);
        let c = fully_corrective(&[[0.5]], &obs, &psf, Weighting::Sampled, 0.25 * w).unwrap();
        assert!((c[0] - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn zero_budget() {
        let (obs, psf) = setup(&[0.3, 0.6], &[1.0, 2.0]);
        let c = fully_corrective(&[[0.3], [0.6]], &obs, &psf, Weighting::Sampled, 0.0).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn far_atom_gets_nothing() {
        let (obs, psf) = setup(&[0.2], &[1.0]);
        let tau = 10.0 * weight(&psf, &obs.sampling, &[0.2]);
        let c = fully_corrective(&[[0.2], [0.95]], &obs, &psf, Weighting::Sampled, tau).unwrap();
        assert!((c[0] - 1.0).abs() <= 1e-8);
        assert!(c[1].abs() <= 1e-8, "{}", c[1]);
    }

    #[test]
    fn duplicates_rejected() {
        let (obs, psf) = setup(&[0.2], &[1.0]);
        assert!(fully_corrective(&[[0.2], [0.2]], &obs, &psf, Weighting::Sampled, 1.0).is_err());
        assert!(fully_corrective(&[[0.2]], &obs, &psf, Weighting::Sampled, -1.0).is_err());
    }

    #[test]
    fn kkt_small_on_clustered_support() {
        let (obs, psf) = setup(&[0.4, 0.405, 0.6], &[1.0, 0.5, 2.0]);
        let locs = [[0.39], [0.402], [0.41], [0.6], [0.8]];
        for (tau, weighting) in [(30.0, Weighting::Sampled), (60.0, Weighting::Sampled), (2.0, Weighting::Unit)] {
            let c = fully_corrective(&locs, &obs, &psf, weighting, tau).unwrap();
            assert!(c.iter().all(|x| *x >= 0.0));
            let k = kkt_residual(&locs, &c, &obs, &psf, weighting, tau);
            assert!(k <= 1e-9, "kkt {k} for tau {tau}");
        }
    }

    #[test]
    fn unit_weighting_budget_is_total_mass() {
        let (obs, psf) = setup(&[0.3, 0.7], &[1.0, 1.0]);
        let c = fully_corrective(&[[0.3], [0.7]], &obs, &psf, Weighting::Unit, 1.0).unwrap();
        assert!((c[0] + c[1] - 1.0).abs() <= 1e-12);
        assert!((c[0] - 0.5).abs() <= 1e-8);
    }
}
