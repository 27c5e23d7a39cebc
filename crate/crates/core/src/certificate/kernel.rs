use nalgebra::DMatrix;
use qd::Quad;

use crate::error::{invalid, Result};
use crate::model::{Psf, SamplingMeasure};

/// The sampling kernel `K_P(t, u) = Σ_s p_s ψ(s, t) ψ(s, u)` and its partials.
#[derive(Debug, Clone, Copy)]
pub struct KernelEval<'a, P> {
    pub psf: &'a P,
    pub sampling: &'a SamplingMeasure<1>,
}

impl<'a, P: Psf<1>> KernelEval<'a, P> {
    pub fn new(psf: &'a P, sampling: &'a SamplingMeasure<1>) -> Self {
        Self { psf, sampling }
    }

    pub(crate) fn psi(&self, s: f64, t: f64, d: u8) -> f64 {
        if d == 0 {
            self.psf.eval(&[s], &[t])
        } else {
            self.psf.grad_t(&[s], &[t])[0]
        }
    }

    pub(crate) fn psi_ext(&self, s: f64, t: f64, d: u8) -> Quad {
        if d == 0 {
            self.psf.eval_ext(&[s], &[t])
        } else {
            self.psf.grad_t_ext(&[s], &[t])[0]
        }
    }

    pub fn w(&self, t: f64) -> f64 {
        crate::model::weight(self.psf, self.sampling, &[t])
    }

    pub fn w_ext(&self, t: f64) -> Quad {
        self.sampling
            .iter()
            .fold(Quad::ZERO, |acc, (s, p)| acc + Quad::from(p) * self.psi_ext(s[0], t, 0))
    }

    /// `v(s) = (ψ(s,t_1..t_M), ∂ψ(s,t_1..t_M))` for every sample, in
    /// double-double.
    pub(crate) fn v_ext(&self, locations: &[f64]) -> Vec<Vec<Quad>> {
        self.sampling
            .points()
            .iter()
            .map(|s| {
                let mut row: Vec<Quad> = locations.iter().map(|&t| self.psi_ext(s[0], t, 0)).collect();
                row.extend(locations.iter().map(|&t| self.psi_ext(s[0], t, 1)));
                row
            })
            .collect()
    }
}

/// `Σ_s p_s ∂^{dt}ψ(s, t) ∂^{du}ψ(s, u)`, derivatives in the source argument.
pub fn kernel<P: Psf<1>>(ke: &KernelEval<'_, P>, t: f64, u: f64, dt: u8, du: u8) -> Result<f64> {
    if dt > 1 || du > 1 {
        return invalid(format!("derivative orders must be 0 or 1, got ({dt}, {du})"));
    }
    if !(t.is_finite() && u.is_finite()) {
        return invalid("kernel arguments must be finite");
    }
    Ok(ke
        .sampling
        .iter()
        .map(|(s, p)| p * ke.psi(s[0], t, dt) * ke.psi(s[0], u, du))
        .sum())
}

pub(crate) fn check_locations(locations: &[f64]) -> Result<()> {
    if locations.is_empty() {
        return invalid("at least one source location is required");
    }
    if locations.iter().any(|t| !t.is_finite()) {
        return invalid("source locations must be finite");
    }
    for (i, a) in locations.iter().enumerate() {
        if locations[i + 1..].contains(a) {
            return invalid(format!("duplicate source location {a}"));
        }
    }
    Ok(())
}

/// The `2M × 2M` matrix `[K, ∂₂K; ∂₁K, ∂₁∂₂K]` evaluated at `(t_j, t_i)`,
/// equal to `Σ_s p_s v(s) v(s)ᵀ`.
pub fn build_limit_matrix<P: Psf<1>>(ke: &KernelEval<'_, P>, locations: &[f64]) -> Result<DMatrix<f64>> {
    check_locations(locations)?;
    let m = locations.len();
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    for (j, &tj) in locations.iter().enumerate() {
        for (i, &ti) in locations.iter().enumerate() {
            k[(j, i)] = kernel(ke, tj, ti, 0, 0)?;
            k[(j, m + i)] = kernel(ke, tj, ti, 0, 1)?;
            k[(m + j, i)] = kernel(ke, tj, ti, 1, 0)?;
            k[(m + j, m + i)] = kernel(ke, tj, ti, 1, 1)?;
        }
    }
    Ok(k)
}

/// The perturbed system: rows `K(t_j − ε, ·)`, `∂₂K(t_j − ε, ·)` and the
/// centred differences `(K(t_j + ε, ·) − K(t_j − ε, ·)) / 2ε`.
pub fn build_eps_matrix<P: Psf<1>>(ke: &KernelEval<'_, P>, locations: &[f64], eps: f64) -> Result<DMatrix<f64>> {
    check_locations(locations)?;
    let mut sorted = locations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(eps > 0.0 && eps < 0.5 * min_gap) {
        return invalid(format!(
            "eps must lie in (0, {}) for these locations, got {eps}",
            0.5 * min_gap
        ));
    }
    let m = locations.len();
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    for (j, &tj) in locations.iter().enumerate() {
        for (i, &ti) in locations.iter().enumerate() {
            for (d, off) in [(0u8, 0), (1u8, m)] {
                let lo = kernel(ke, tj - eps, ti, 0, d)?;
                let hi = kernel(ke, tj + eps, ti, 0, d)?;
                k[(j, off + i)] = lo;
                k[(m + j, off + i)] = (hi - lo) / (2.0 * eps);
            }
        }
    }
    Ok(k)
}

/// Singular values of `diag(√p) V`, whose squares are the eigenvalues of the
/// limit matrix. Padded with zeros when there are fewer samples than columns.
pub(crate) fn factor_singular_values<P: Psf<1>>(ke: &KernelEval<'_, P>, locations: &[f64]) -> Vec<f64> {
    let m = locations.len();
    let n = ke.sampling.len();
    let f = DMatrix::from_fn(n, 2 * m, |r, c| {
        let (s, p) = (ke.sampling.points()[r][0], ke.sampling.weights()[r]);
        let (t, d) = if c < m { (locations[c], 0) } else { (locations[c - m], 1) };
        p.sqrt() * ke.psi(s, t, d)
    });
    let mut sv: Vec<f64> = f.singular_values().iter().copied().collect();
    sv.resize(2 * m, 0.0);
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}
