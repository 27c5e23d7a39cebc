use crate::error::{invalid, Result};
use crate::model::{Domain, Point, Psf, SamplingMeasure, Weighting};

use super::SolverOptions;

const COORD_ROUNDS: usize = 5;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// `score(t) = ⟨r, ψ_t⟩ / w(t)`; zero where the weight vanishes.
pub fn lmo_score<const D: usize, P: Psf<D>>(
    r: &[f64],
    psf: &P,
    sampling: &SamplingMeasure<D>,
    weighting: Weighting,
    t: &Point<D>,
) -> f64 {
    let mut corr = 0.0;
    let mut w = 0.0;
    for ((s, p), ri) in sampling.iter().zip(r) {
        let v = psf.eval(s, t);
        corr += ri * v;
        w += p * v;
    }
    if weighting == Weighting::Unit {
        w = 1.0;
    }
    if w > 0.0 {
        corr / w
    } else {
        0.0
    }
}

/// Minimizes a unimodal-ish `f` on `[a, b]`, returning the best point seen.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn axis_counts<const D: usize>(total: usize) -> [usize; D] {
    let per_axis = (total as f64).powf(1.0 / D as f64).ceil() as usize;
    [per_axis.max(2); D]
}

fn grid_coord(lo: f64, hi: f64, m: usize, j: usize) -> f64 {
    if j + 1 == m {
        hi
    } else {
        lo + (hi - lo) * j as f64 / (m - 1) as f64
    }
}

/// Continuous linear minimization oracle: the location minimizing
/// [`lmo_score`] over the domain, with the minimal score.
pub fn lmo<const D: usize, P: Psf<D>>(
    r: &[f64],
    psf: &P,
    sampling: &SamplingMeasure<D>,
    weighting: Weighting,
    domain: &Domain<D>,
    opts: &SolverOptions,
) -> Result<(Point<D>, f64)> {
    if r.len() != sampling.len() {
        return invalid(format!(
            "residual has {} entries for {} samples",
            r.len(),
            sampling.len()
        ));
    }
    let score = |t: &Point<D>| lmo_score(r, psf, sampling, weighting, t);
    let counts = axis_counts::<D>(opts.grid_oversample.max(1) * sampling.len());
    let total: usize = counts.iter().product();

    let mut best_t = domain.lo;
    let mut best = f64::INFINITY;
    for flat in 0..total {
        let mut rem = flat;
        let mut t = [0.0; D];
        for a in (0..D).rev() {
            let j = rem % counts[a];
            rem /= counts[a];
            t[a] = grid_coord(domain.lo[a], domain.hi[a], counts[a], j);
        }
        let v = score(&t);
        if v < best {
            best = v;
            best_t = t;
        }
    }

    let tol = opts.refine_tol(domain);
    let half: [f64; D] = std::array::from_fn(|a| domain.width(a) / (counts[a] - 1) as f64);
    let rounds = if D == 1 { 1 } else { COORD_ROUNDS };
    for _ in 0..rounds {
        for a in 0..D {
            let lo = (best_t[a] - half[a]).max(domain.lo[a]);
            let hi = (best_t[a] + half[a]).min(domain.hi[a]);
            let line = |x: f64| {
                let mut t = best_t;
                t[a] = x;
                score(&t)
            };
            let (x, v) = golden_section(line, lo, hi, tol);
            if v < best {
                best = v;
                best_t[a] = x;
            }
        }
    }
    Ok((best_t, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{distance, Gaussian};

    fn opts() -> SolverOptions {
        SolverOptions::new(1.0)
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!(v < 1e-12);
    }

    #[test]
    fn single_bump() {
        let psf = Gaussian::new(0.1).unwrap();
        let sampling = SamplingMeasure::uniform_grid(100, 0.0, 1.0).unwrap();
        let r: Vec<f64> = sampling
            .points()
            .iter()
            .map(|s| -2.0 * Psf::<1>::eval(&psf, s, &[0.4]))
            .collect();
        let (t, v) = lmo(&r, &psf, &sampling, Weighting::Sampled, &Domain::unit(), &opts()).unwrap();
        // Dense grid oracle.
        let mut best = (0.0, f64::INFINITY);
        for j in 0..=1_000_000 {
            let x = j as f64 * 1e-6;
            let s = lmo_score(&r, &psf, &sampling, Weighting::Sampled, &[x]);
            if s < best.1 {
                best = (x, s);
            }
        }
        assert!((t[0] - best.0).abs() <= 1e-6, "{t:?} vs {best:?}");
        assert!((t[0] - 0.4).abs() <= 1e-6, "{t:?}");
        assert!(v <= best.1 + 1e-15);
    }

    #[test]
    fn zero_residual() {
        let psf = Gaussian::new(0.1).unwrap();
        let sampling = SamplingMeasure::uniform_grid(20, 0.0, 1.0).unwrap();
        let (t, v) = lmo(&[0.0; 20], &psf, &sampling, Weighting::Sampled, &Domain::unit(), &opts()).unwrap();
        assert_eq!(v, 0.0);
        assert!(Domain::<1>::unit().contains(&t));
    }

    #[test]
    fn mirror_symmetric_residual() {
        let psf = Gaussian::new(0.1).unwrap();
        let sampling = SamplingMeasure::uniform_grid(101, 0.0, 1.0).unwrap();
        let r: Vec<f64> = sampling
            .points()
            .iter()
            .map(|s| -Psf::<1>::eval(&psf, s, &[0.3]) - Psf::<1>::eval(&psf, s, &[0.7]) + 0.1 * (s[0] - 0.5).powi(2))
            .collect();
        let d = Domain::unit();
        let (t, v) = lmo(&r, &psf, &sampling, Weighting::Sampled, &d, &opts()).unwrap();
        let m = lmo_score(&r, &psf, &sampling, Weighting::Sampled, &d.mirror(&t));
        assert!((v - m).abs() <= 1e-9, "{v} {m}");
    }

    #[test]
    fn length_mismatch() {
        let psf = Gaussian::new(0.1).unwrap();
        let sampling = SamplingMeasure::uniform_grid(20, 0.0, 1.0).unwrap();
        assert!(lmo(&[0.0; 3], &psf, &sampling, Weighting::Sampled, &Domain::unit(), &opts()).is_err());
    }

    #[test]
    fn two_dimensional_bump() {
        let psf = Gaussian::new(0.08).unwrap();
        let d = Domain::<2>::unit();
        let sampling = SamplingMeasure::pixel_grid(16, 16, &d).unwrap();
        let truth = [0.37, 0.61];
        let r: Vec<f64> = sampling
            .points()
            .iter()
            .map(|s| -2.0 * Psf::<2>::eval(&psf, s, &truth))
            .collect();
        for weighting in [Weighting::Unit, Weighting::Sampled] {
            let (t, v) = lmo(&r, &psf, &sampling, weighting, &d, &opts()).unwrap();
            // Dense local grid oracle around the true source.
            let step = 5e-5;
            let mut best = f64::INFINITY;
            for i in -200..=200 {
                for j in -200..=200 {
                    let p = [truth[0] + i as f64 * step, truth[1] + j as f64 * step];
                    best = best.min(lmo_score(&r, &psf, &sampling, weighting, &p));
                }
            }
            assert!(v <= best + 1e-12 * best.abs(), "{v} vs {best}");
            assert!(distance(&t, &truth) < 2e-3, "{t:?}");
        }
    }
}
