//! Dual certificates for the noiseless problem in one dimension.
//!
//! The candidate `Q̃(t) = Σ α_i K_P(t, t_i) + β_i ∂₂K_P(t, t_i)` interpolates
//! the weight `w` and its derivative at the sources. Writing
//! `q(s) = Σ α_i ψ(s, t_i) + β_i ∂ψ(s, t_i)` gives
//! `w(t) − Q̃(t) = Σ_s p_s ψ(s, t) (1 − q(s))`; the certificate is valid when
//! this has one sign on the domain (reflecting to `2w − Q̃` when it is
//! nonpositive).
//!
//! For clustered sources the linear system is badly conditioned and the
//! margin near a source is many orders of magnitude below the size of the
//! coefficients, so the system is solved and the margin evaluated in
//! double-double arithmetic.

mod conditions;
mod kernel;

pub use conditions::{check_conditions, default_rho, lambda_det, ConditionReport};
pub use kernel::{build_eps_matrix, build_limit_matrix, kernel, KernelEval};

use qd::Quad;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext;
use crate::model::{Domain, Psf};

use kernel::{check_locations, factor_singular_values};

/// Relative floor on the singular values of `diag(√p) V`.
pub const INDEPENDENCE_TOL: f64 = 1e-10;
/// Absolute tolerance on the margin when choosing a branch.
pub const BRANCH_TOL: f64 = 1e-9;
pub const VERIFY_GRID: usize = 10_000;
pub const NEIGHBORHOOD_POINTS: usize = 50;
pub const NEIGHBORHOOD_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `Q = Q̃ ≤ w`.
    Direct,
    /// `Q = 2w − Q̃ ≤ w`.
    Reflected,
    /// Neither sign pattern holds on the verification grid.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub grid_points: usize,
    /// Smallest `w − Q` over grid points not on the support.
    pub min_margin: f64,
    pub argmin: f64,
    /// Largest `Q − w` over the whole grid.
    pub max_excess: f64,
    pub max_w: f64,
    /// `max_i |Q(t_i) − w(t_i)| / w(t_i)`.
    pub interp_residual: f64,
    /// `max_i |Q'(t_i) − w'(t_i)|`.
    pub deriv_residual: f64,
    /// Grid points with `w − Q ≤ 1e-8` farther than `1e-4` from every source.
    pub near_equality_off_support: usize,
    /// Grid points whose margin needed the full double-double evaluation.
    pub extended_evaluations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub locations: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Low-order parts of the double-double coefficients.
    pub alpha_lo: Vec<f64>,
    pub beta_lo: Vec<f64>,
    pub branch: Branch,
    pub margin_report: MarginReport,
}

impl Certificate {
    pub fn is_valid(&self) -> bool {
        self.branch != Branch::Invalid
    }

    fn coeffs_ext(&self) -> Vec<Quad> {
        self.alpha
            .iter()
            .zip(&self.alpha_lo)
            .chain(self.beta.iter().zip(&self.beta_lo))
            .map(|(&h, &l)| Quad(h, l))
            .collect()
    }

    fn sign(&self) -> f64 {
        if self.branch == Branch::Reflected {
            -1.0
        } else {
            1.0
        }
    }
}

/// Precomputed `1 − q(s)` for fast margin evaluation.
struct MarginEval<'k, 'a, P> {
    ke: &'k KernelEval<'a, P>,
    one_minus_q: Vec<Quad>,
    coeffs: Vec<Quad>,
}

impl<'k, 'a, P: Psf<1>> MarginEval<'k, 'a, P> {
    fn new(ke: &'k KernelEval<'a, P>, locations: &[f64], coeffs: Vec<Quad>) -> Self {
        let v = ke.v_ext(locations);
        let one_minus_q = v
            .iter()
            .map(|row| {
                let q = row.iter().zip(&coeffs).fold(Quad::ZERO, |acc, (a, b)| acc + *a * *b);
                Quad::ONE - q
            })
            .collect();
        Self {
            ke,
            one_minus_q,
            coeffs,
        }
    }

    /// `∂^d (w − Q̃)(t)` in full double-double.
    fn exact(&self, t: f64, d: u8) -> Quad {
        self.ke
            .sampling
            .iter()
            .zip(&self.one_minus_q)
            .fold(Quad::ZERO, |acc, ((s, p), c)| {
                acc + Quad::from(p) * self.ke.psi_ext(s[0], t, d) * *c
            })
    }

    /// `(w − Q̃)(t)`: a cheap `f64` kernel pass whose sign and value are
    /// trusted when they clear a rounding bound, double-double otherwise.
    /// The bound assumes `ψ` is computed as an exponential whose relative
    /// error grows with `|ln ψ|`.
    fn margin(&self, t: f64) -> (f64, bool) {
        let mut sum = 0.0;
        let mut bound = 0.0;
        for ((s, p), c) in self.ke.sampling.iter().zip(&self.one_minus_q) {
            let psi = self.ke.psi(s[0], t, 0);
            let term = p * psi * c.0;
            sum += term;
            bound += term.abs() * (4.0 + psi.ln().abs().min(1e3));
        }
        let n = self.ke.sampling.len() as f64;
        let bound = 16.0 * f64::EPSILON * bound * (1.0 + n * f64::EPSILON) + 1e-300;
        if sum.abs() > 2.0 * bound {
            (sum, false)
        } else {
            let e = self.exact(t, 0);
            (e.0 + e.1, true)
        }
    }

    fn q_tilde(&self, t: f64) -> Quad {
        self.ke
            .sampling
            .iter()
            .zip(&self.one_minus_q)
            .fold(Quad::ZERO, |acc, ((s, p), c)| {
                acc + Quad::from(p) * self.ke.psi_ext(s[0], t, 0) * (Quad::ONE - *c)
            })
    }
}

/// The 10⁴-point uniform grid plus `±k·1e-3/50` offsets around each source.
pub fn verification_grid(domain: &Domain<1>, locations: &[f64]) -> Vec<f64> {
    let (lo, hi) = (domain.lo[0], domain.hi[0]);
    let mut grid: Vec<f64> = (0..VERIFY_GRID)
        .map(|j| lo + (hi - lo) * j as f64 / (VERIFY_GRID - 1) as f64)
        .collect();
    let step = NEIGHBORHOOD_RADIUS / NEIGHBORHOOD_POINTS as f64;
    for &t in locations {
        for k in 1..=NEIGHBORHOOD_POINTS {
            for sgn in [-1.0, 1.0] {
                let x = t + sgn * k as f64 * step;
                if (lo..=hi).contains(&x) {
                    grid.push(x);
                }
            }
        }
    }
    grid
}

fn sample_warning(n: usize, m: usize) -> Option<String> {
    (n <= 2 * m).then(|| {
        format!("only {n} samples for {m} sources; uniqueness of the recovered measure needs more than {}", 2 * m)
    })
}

/// Solves the limit interpolation system and verifies the result on the
/// verification grid over `domain`.
pub fn solve_certificate<P: Psf<1>>(
    ke: &KernelEval<'_, P>,
    locations: &[f64],
    domain: &Domain<1>,
) -> Result<Certificate> {
    check_locations(locations)?;
    let mut locs = locations.to_vec();
    locs.sort_by(f64::total_cmp);
    let m = locs.len();

    let sv = factor_singular_values(ke, &locs);
    let ratio = sv[2 * m - 1] / sv[0];
    if !(ratio > INDEPENDENCE_TOL) {
        return Err(Error::ConditionFailure {
            condition: "independence",
            detail: format!(
                "limit matrix is numerically singular: smallest/largest singular value of its factor is {ratio:e}"
            ),
        });
    }

    let v = ke.v_ext(&locs);
    let mut a = vec![vec![Quad::ZERO; 2 * m]; 2 * m];
    let mut rhs = vec![Quad::ZERO; 2 * m];
    for (row, &p) in v.iter().zip(ke.sampling.weights()) {
        let p = Quad::from(p);
        for i in 0..2 * m {
            let pi = p * row[i];
            rhs[i] += pi;
            for j in 0..2 * m {
                a[i][j] += pi * row[j];
            }
        }
    }
    let coeffs = ext::solve(a, rhs).ok_or_else(|| Error::ConditionFailure {
        condition: "independence",
        detail: "limit matrix is singular".into(),
    })?;

    let eval = MarginEval::new(ke, &locs, coeffs);
    let exclusion = 1e-9 * domain.extent();
    let grid = verification_grid(domain, &locs);
    let mut min_m = f64::INFINITY;
    let mut max_m = f64::NEG_INFINITY;
    let mut margins = Vec::with_capacity(grid.len());
    let mut extended = 0;
    let mut max_w: f64 = 0.0;
    for &t in &grid {
        let (mt, ext_used) = eval.margin(t);
        extended += ext_used as usize;
        min_m = min_m.min(mt);
        max_m = max_m.max(mt);
        max_w = max_w.max(ke.w(t));
        margins.push(mt);
    }
    let branch = if min_m >= -BRANCH_TOL {
        Branch::Direct
    } else if max_m <= BRANCH_TOL {
        Branch::Reflected
    } else {
        Branch::Invalid
    };
    let sgn = if branch == Branch::Reflected { -1.0 } else { 1.0 };

    let mut min_margin = f64::INFINITY;
    let mut argmin = f64::NAN;
    let mut max_excess = f64::NEG_INFINITY;
    let mut near = 0;
    for (&t, &mt) in grid.iter().zip(&margins) {
        let eff = sgn * mt;
        max_excess = max_excess.max(-eff);
        let dist = locs.iter().map(|x| (x - t).abs()).fold(f64::INFINITY, f64::min);
        if dist > exclusion && eff < min_margin {
            min_margin = eff;
            argmin = t;
        }
        if dist > 1e-4 && eff <= 1e-8 {
            near += 1;
        }
    }

    let mut interp_residual: f64 = 0.0;
    let mut deriv_residual: f64 = 0.0;
    for &t in &locs {
        let r0 = eval.exact(t, 0);
        let r1 = eval.exact(t, 1);
        interp_residual = interp_residual.max((r0.0 + r0.1).abs() / ke.w(t));
        deriv_residual = deriv_residual.max((r1.0 + r1.1).abs());
    }

    let mut warnings: Vec<String> = sample_warning(ke.sampling.len(), m).into_iter().collect();
    if branch == Branch::Invalid {
        warnings.push(format!(
            "w - Q changes sign on the grid (min {min_m:e}, max {max_m:e})"
        ));
    }

    let (alpha, alpha_lo): (Vec<f64>, Vec<f64>) = eval.coeffs[..m].iter().map(|q| (q.0, q.1)).unzip();
    let (beta, beta_lo): (Vec<f64>, Vec<f64>) = eval.coeffs[m..].iter().map(|q| (q.0, q.1)).unzip();
    Ok(Certificate {
        locations: locs,
        alpha,
        beta,
        alpha_lo,
        beta_lo,
        branch,
        margin_report: MarginReport {
            grid_points: grid.len(),
            min_margin,
            argmin,
            max_excess,
            max_w,
            interp_residual,
            deriv_residual,
            near_equality_off_support: near,
            extended_evaluations: extended,
            warnings,
        },
    })
}

/// `Q(t)`: `Q̃(t)` on the direct branch, `2w(t) − Q̃(t)` on the reflected one.
pub fn certificate_value<P: Psf<1>>(cert: &Certificate, ke: &KernelEval<'_, P>, t: f64) -> f64 {
    let eval = MarginEval::new(ke, &cert.locations, cert.coeffs_ext());
    let q = eval.q_tilde(t);
    let q = if cert.branch == Branch::Reflected {
        Quad::from(2.0) * ke.w_ext(t) - q
    } else {
        q
    };
    q.0 + q.1
}

/// `w(t) − Q(t)`, accurate even where it is tiny.
pub fn certificate_margin<P: Psf<1>>(cert: &Certificate, ke: &KernelEval<'_, P>, t: f64) -> f64 {
    let eval = MarginEval::new(ke, &cert.locations, cert.coeffs_ext());
    cert.sign() * eval.margin(t).0
}

#[cfg(test)]
mod tests;
