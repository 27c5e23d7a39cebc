use qd::Quad;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ext;
use crate::model::{Domain, Psf};
use crate::simulate::item_rng;

use super::kernel::{check_locations, factor_singular_values, KernelEval};
use super::{sample_warning, VERIFY_GRID};

/// Minimum spacing between the points of a drawn tuple, relative to `ρ`.
const TUPLE_GAP_REL: f64 = 1e-3;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `min w` over the uniform verification grid.
    pub positivity_min_w: f64,
    /// Smallest singular value of the limit matrix.
    pub independence_min_singular: f64,
    /// Smallest over largest singular value of the limit matrix.
    pub independence_ratio: f64,
    pub determinantal_min_absdet: f64,
    pub determinantal_sign_consistent: bool,
    pub determinantal_positive: usize,
    pub determinantal_negative: usize,
    /// Determinants too small to sign reliably in double-double.
    pub determinantal_uncertified: usize,
    pub samples_tested: usize,
    pub rho: f64,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn positivity_ok(&self) -> bool {
        self.positivity_min_w > 0.0
    }

    pub fn independence_ok(&self) -> bool {
        self.independence_ratio.sqrt() > super::INDEPENDENCE_TOL
    }

    pub fn determinantal_ok(&self) -> bool {
        self.determinantal_sign_consistent
            && self.determinantal_min_absdet > 0.0
            && self.determinantal_uncertified == 0
    }

    pub fn all_ok(&self) -> bool {
        self.positivity_ok() && self.independence_ok() && self.determinantal_ok()
    }
}

/// Half the smallest gap between sources, capped at a tenth of the domain.
pub fn default_rho(locations: &[f64], domain: &Domain<1>) -> f64 {
    let mut sorted = locations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    (0.5 * gap).min(0.1 * domain.extent())
}

/// `det Λ(p_1, …, p_{2M+1})` with columns `(κ(p_j); 1)` and
/// `κ(p) = Σ_s p_s ψ(s, p) v(s) / w(p)`, together with a bound on its
/// rounding error.
pub fn lambda_det<P: Psf<1>>(ke: &KernelEval<'_, P>, locations: &[f64], points: &[f64]) -> Result<(f64, f64)> {
    check_locations(locations)?;
    let m = locations.len();
    if points.len() != 2 * m + 1 {
        return invalid(format!("need {} points for {m} sources, got {}", 2 * m + 1, points.len()));
    }
    let v = ke.v_ext(locations);
    let weights: Vec<Quad> = ke.sampling.weights().iter().map(|&p| Quad::from(p)).collect();
    let mut mat = vec![vec![Quad::ZERO; 2 * m + 1]; 2 * m + 1];
    for (j, &pj) in points.iter().enumerate() {
        let psi: Vec<Quad> = ke
            .sampling
            .points()
            .iter()
            .zip(&weights)
            .map(|(s, &p)| p * ke.psi_ext(s[0], pj, 0))
            .collect();
        let w = psi.iter().fold(Quad::ZERO, |acc, x| acc + *x);
        for i in 0..2 * m {
            let k = v.iter().zip(&psi).fold(Quad::ZERO, |acc, (row, x)| acc + row[i] * *x);
            mat[i][j] = k / w;
        }
        mat[2 * m][j] = Quad::ONE;
    }
    let n = (2 * m + 1) as f64;
    let bound = 8.0 * n * n * ext::DD_EPS * ext::hadamard_bound(&mat);
    let d = ext::det(mat);
    Ok((d.0 + d.1, bound))
}

fn spaced(points: &[f64], gap: f64) -> bool {
    let mut s = points.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[1] - w[0] >= gap)
}

fn draw_tuple(rng: &mut impl Rng, locations: &[f64], domain: &Domain<1>, rho: f64, local: bool) -> Vec<f64> {
    let (lo, hi) = (domain.lo[0], domain.hi[0]);
    let gap = TUPLE_GAP_REL * rho;
    let mut pts = Vec::with_capacity(2 * locations.len() + 1);
    for _ in 0..MAX_REDRAWS {
        pts.clear();
        if local {
            for &t in locations {
                let (a, b) = ((t - rho).max(lo), (t + rho).min(hi));
                pts.push(rng.random_range(a..b));
                pts.push(rng.random_range(a..b));
            }
            pts.push(rng.random_range(lo..=hi));
        } else {
            for _ in 0..2 * locations.len() + 1 {
                pts.push(rng.random_range(lo..=hi));
            }
        }
        if spaced(&pts, gap) {
            break;
        }
    }
    pts.sort_by(f64::total_cmp);
    pts
}

/// Numerical checks of positivity, independence and the determinantal
/// condition. Tuples alternate between two points near each source plus a
/// free point, and fully random points; all are sorted before the
/// determinant is taken so that a consistent sign is expected.
pub fn check_conditions<P: Psf<1>>(
    ke: &KernelEval<'_, P>,
    locations: &[f64],
    domain: &Domain<1>,
    n_random: usize,
    rho: Option<f64>,
    seed: u64,
) -> Result<ConditionReport> {
    check_locations(locations)?;
    if n_random == 0 {
        return invalid("n_random must be >= 1");
    }
    let rho = rho.unwrap_or_else(|| default_rho(locations, domain));
    if !(rho.is_finite() && rho > 0.0) {
        return invalid(format!("rho must be finite and > 0, got {rho}"));
    }
    let mut locs = locations.to_vec();
    locs.sort_by(f64::total_cmp);
    let m = locs.len();

    let (lo, hi) = (domain.lo[0], domain.hi[0]);
    let positivity_min_w = (0..VERIFY_GRID)
        .map(|j| ke.w(lo + (hi - lo) * j as f64 / (VERIFY_GRID - 1) as f64))
        .fold(f64::INFINITY, f64::min);

    let sv = factor_singular_values(ke, &locs);
    let smax = sv[0] * sv[0];
    let smin = sv[2 * m - 1] * sv[2 * m - 1];

    let mut report = ConditionReport {
        positivity_min_w,
        independence_min_singular: smin,
        independence_ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        determinantal_min_absdet: f64::INFINITY,
        determinantal_sign_consistent: true,
        determinantal_positive: 0,
        determinantal_negative: 0,
        determinantal_uncertified: 0,
        samples_tested: n_random,
        rho,
        warnings: sample_warning(ke.sampling.len(), m).into_iter().collect(),
    };
    for k in 0..n_random {
        let mut rng = item_rng(seed, k);
        let pts = draw_tuple(&mut rng, &locs, domain, rho, k % 2 == 0);
        let (d, bound) = lambda_det(ke, &locs, &pts)?;
        if d.abs() <= bound {
            report.determinantal_uncertified += 1;
        } else if d > 0.0 {
            report.determinantal_positive += 1;
        } else {
            report.determinantal_negative += 1;
        }
        report.determinantal_min_absdet = report.determinantal_min_absdet.min(d.abs());
    }
    report.determinantal_sign_consistent =
        report.determinantal_positive == 0 || report.determinantal_negative == 0;
    Ok(report)
}
