//! Point spread functions, observation designs and the weight function
//! `w(t) = Σ p_i ψ(s_i, t)` shared by the solver and the certificate code.
//!
//! Locations are fixed-size arrays `[f64; D]`; everything in the crate is
//! generic over `D` where the math allows it (the certificate and T-system
//! code is one-dimensional only).

use std::cmp::Ordering;

use qd::Quad;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A location in `D`-dimensional signal space.
pub type Point<const D: usize> = [f64; D];

/// Axis-aligned box `[lo, hi]` (an interval when `D == 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain<const D: usize> {
    #[serde(with = "serde_point")]
    pub lo: Point<D>,
    #[serde(with = "serde_point")]
    pub hi: Point<D>,
}

impl<const D: usize> Domain<D> {
    pub fn new(lo: Point<D>, hi: Point<D>) -> Result<Self> {
        for k in 0..D {
            if !lo[k].is_finite() || !hi[k].is_finite() {
                return invalid(format!("domain bounds must be finite (axis {k})"));
            }
            if lo[k] >= hi[k] {
                return invalid(format!("domain needs lo < hi (axis {k})"));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The unit interval or unit square.
    pub fn unit() -> Self {
        Self {
            lo: [0.0; D],
            hi: [1.0; D],
        }
    }

    pub fn contains(&self, t: &Point<D>) -> bool {
        (0..D).all(|k| t[k] >= self.lo[k] && t[k] <= self.hi[k])
    }

    pub fn clamp(&self, t: &Point<D>) -> Point<D> {
        let mut out = *t;
        for k in 0..D {
            out[k] = out[k].clamp(self.lo[k], self.hi[k]);
        }
        out
    }

    /// Longest side length; the scale used for relative tolerances.
    pub fn extent(&self) -> f64 {
        (0..D).map(|k| self.hi[k] - self.lo[k]).fold(0.0, f64::max)
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Reflection through the domain center.
    pub fn mirror(&self, t: &Point<D>) -> Point<D> {
        let mut out = *t;
        for k in 0..D {
            out[k] = self.lo[k] + self.hi[k] - t[k];
        }
        out
    }
}

impl Domain<1> {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new([lo], [hi])
    }
}

/// Discrete positive measure on the sample locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeasure<const D: usize> {
    #[serde(with = "serde_points")]
    points: Vec<Point<D>>,
    weights: Vec<f64>,
}

impl<const D: usize> SamplingMeasure<D> {
    pub fn new(points: Vec<Point<D>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return invalid("sampling measure needs at least one point");
        }
        if points.len() != weights.len() {
            return invalid(format!(
                "{} sample points but {} weights",
                points.len(),
                weights.len()
            ));
        }
        if let Some(p) = weights.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return invalid(format!("sample weights must be positive and finite, got {p}"));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return invalid("sample locations must be finite");
        }
        let mut sorted = points.clone();
        sorted.sort_by(lex_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("sample locations must be pairwise distinct");
        }
        Ok(Self { points, weights })
    }

    /// Counting measure: every point gets weight 1.
    pub fn uniform(points: Vec<Point<D>>) -> Result<Self> {
        let weights = vec![1.0; points.len()];
        Self::new(points, weights)
    }

    pub fn points(&self) -> &[Point<D>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point<D>, f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Same measure with every location shifted by `offset`.
    pub fn translated(&self, offset: &Point<D>) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = *p;
                for k in 0..D {
                    q[k] += offset[k];
                }
                q
            })
            .collect();
        Self {
            points,
            weights: self.weights.clone(),
        }
    }
}

impl SamplingMeasure<1> {
    /// `n` equispaced points covering `[lo, hi]` including both ends, unit weights.
    pub fn uniform_grid(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 {
            return invalid("grid needs n >= 1");
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid("grid needs finite lo < hi");
        }
        let points = if n == 1 {
            vec![[0.5 * (lo + hi)]]
        } else {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| [lo + h * i as f64]).collect()
        };
        Self::uniform(points)
    }
}

impl SamplingMeasure<2> {
    /// Pixel centers of an `nx` by `ny` sensor tiling `domain`, unit weights.
    pub fn pixel_grid(nx: usize, ny: usize, domain: &Domain<2>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid("pixel grid needs at least one pixel per axis");
        }
        let hx = domain.width(0) / nx as f64;
        let hy = domain.width(1) / ny as f64;
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                points.push([
                    domain.lo[0] + (i as f64 + 0.5) * hx,
                    domain.lo[1] + (j as f64 + 0.5) * hy,
                ]);
            }
        }
        Self::uniform(points)
    }
}

/// Point spread function `ψ(s, t)`: response at sensor location `s` to a
/// unit source at `t`.
///
/// `eval_ext`/`grad_t_ext` are the double-double versions used by the
/// certificate code. The defaults just widen the `f64` result; models that
/// want certificates for tightly clustered sources should override them.
pub trait Psf<const D: usize>: Send + Sync {
    fn eval(&self, s: &Point<D>, t: &Point<D>) -> f64;

    /// Gradient of `ψ(s, t)` with respect to the source location `t`.
    fn grad_t(&self, s: &Point<D>, t: &Point<D>) -> Point<D>;

    fn eval_ext(&self, s: &Point<D>, t: &Point<D>) -> Quad {
        Quad::from(self.eval(s, t))
    }

    fn grad_t_ext(&self, s: &Point<D>, t: &Point<D>) -> [Quad; D] {
        self.grad_t(s, t).map(Quad::from)
    }
}

/// `ψ(s, t) = exp(-‖s - t‖² / σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    sigma: f64,
}

impl Gaussian {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return invalid(format!("Gaussian width must be positive and finite, got {sigma}"));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl<const D: usize> Psf<D> for Gaussian {
    #[inline]
    fn eval(&self, s: &Point<D>, t: &Point<D>) -> f64 {
        let mut r2 = 0.0;
        for k in 0..D {
            let d = s[k] - t[k];
            r2 += d * d;
        }
        (-r2 / (self.sigma * self.sigma)).exp()
    }

    #[inline]
    fn grad_t(&self, s: &Point<D>, t: &Point<D>) -> Point<D> {
        let s2 = self.sigma * self.sigma;
        let v = Psf::<D>::eval(self, s, t);
        let mut g = [0.0; D];
        for k in 0..D {
            g[k] = 2.0 * (s[k] - t[k]) / s2 * v;
        }
        g
    }

    fn eval_ext(&self, s: &Point<D>, t: &Point<D>) -> Quad {
        let sigma = Quad::from(self.sigma);
        let mut r2 = Quad::ZERO;
        for k in 0..D {
            let d = Quad::from(s[k]) - Quad::from(t[k]);
            r2 += d * d;
        }
        (-(r2 / (sigma * sigma))).exp()
    }

    fn grad_t_ext(&self, s: &Point<D>, t: &Point<D>) -> [Quad; D] {
        let sigma = Quad::from(self.sigma);
        let s2 = sigma * sigma;
        let v = Psf::<D>::eval_ext(self, s, t);
        std::array::from_fn(|k| {
            let d = Quad::from(s[k]) - Quad::from(t[k]);
            Quad::from(2.0) * d / s2 * v
        })
    }
}

fn check_finite<const D: usize>(p: &Point<D>, what: &str) -> Result<()> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} must be finite, got {p:?}"))
    }
}

/// `ψ(s, t)` with input validation.
pub fn psf_eval<const D: usize>(psf: &impl Psf<D>, s: &Point<D>, t: &Point<D>) -> Result<f64> {
    check_finite(s, "sample location")?;
    check_finite(t, "source location")?;
    Ok(psf.eval(s, t))
}

/// `∂ψ/∂t (s, t)` with input validation.
pub fn psf_deriv_t<const D: usize>(
    psf: &impl Psf<D>,
    s: &Point<D>,
    t: &Point<D>,
) -> Result<Point<D>> {
    check_finite(s, "sample location")?;
    check_finite(t, "source location")?;
    Ok(psf.grad_t(s, t))
}

/// `w(t) = Σ_i p_i ψ(s_i, t)`.
pub fn weight<const D: usize>(
    psf: &impl Psf<D>,
    sampling: &SamplingMeasure<D>,
    t: &Point<D>,
) -> f64 {
    sampling.iter().map(|(s, p)| p * psf.eval(s, t)).sum()
}

/// `∇w(t) = Σ_i p_i ∂ψ/∂t (s_i, t)`.
pub fn weight_grad<const D: usize>(
    psf: &impl Psf<D>,
    sampling: &SamplingMeasure<D>,
    t: &Point<D>,
) -> Point<D> {
    let mut g = [0.0; D];
    for (s, p) in sampling.iter() {
        let d = psf.grad_t(s, t);
        for k in 0..D {
            g[k] += p * d[k];
        }
    }
    g
}

/// Which weight the mass budget `∫ w dμ ≤ τ` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `w(t) = Σ p_i ψ(s_i, t)` from the sampling measure.
    #[default]
    Sampled,
    /// `w ≡ 1`: the plain total-variation budget.
    Unit,
}

impl Weighting {
    pub fn eval<const D: usize>(
        &self,
        psf: &impl Psf<D>,
        sampling: &SamplingMeasure<D>,
        t: &Point<D>,
    ) -> f64 {
        match self {
            Weighting::Sampled => weight(psf, sampling, t),
            Weighting::Unit => 1.0,
        }
    }

    pub fn grad<const D: usize>(
        &self,
        psf: &impl Psf<D>,
        sampling: &SamplingMeasure<D>,
        t: &Point<D>,
    ) -> Point<D> {
        match self {
            Weighting::Sampled => weight_grad(psf, sampling, t),
            Weighting::Unit => [0.0; D],
        }
    }
}

/// Ground-truth sources `μ★ = Σ c_i δ_{t_i}`, stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfiguration<const D: usize> {
    #[serde(with = "serde_points")]
    locations: Vec<Point<D>>,
    amplitudes: Vec<f64>,
}

impl<const D: usize> SourceConfiguration<D> {
    pub fn new(locations: Vec<Point<D>>, amplitudes: Vec<f64>) -> Result<Self> {
        if locations.len() != amplitudes.len() {
            return invalid(format!(
                "{} locations but {} amplitudes",
                locations.len(),
                amplitudes.len()
            ));
        }
        if let Some(c) = amplitudes.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return invalid(format!("amplitudes must be positive and finite, got {c}"));
        }
        if locations.iter().flatten().any(|x| !x.is_finite()) {
            return invalid("source locations must be finite");
        }
        let mut pairs: Vec<(Point<D>, f64)> = locations.into_iter().zip(amplitudes).collect();
        pairs.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return invalid("source locations must be pairwise distinct");
        }
        let (locations, amplitudes) = pairs.into_iter().unzip();
        Ok(Self {
            locations,
            amplitudes,
        })
    }

    pub fn empty() -> Self {
        Self {
            locations: Vec::new(),
            amplitudes: Vec::new(),
        }
    }

    pub fn locations(&self) -> &[Point<D>] {
        &self.locations
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// `Σ w(t_i) c_i`, the smallest budget under which the truth is feasible.
    pub fn weighted_mass(
        &self,
        psf: &impl Psf<D>,
        sampling: &SamplingMeasure<D>,
        weighting: Weighting,
    ) -> f64 {
        self.locations
            .iter()
            .zip(&self.amplitudes)
            .map(|(t, c)| c * weighting.eval(psf, sampling, t))
            .sum()
    }
}

/// Lexicographic order on points, NaN-free inputs assumed.
pub fn lex_cmp<const D: usize>(a: &Point<D>, b: &Point<D>) -> Ordering {
    for k in 0..D {
        match a[k].partial_cmp(&b[k]) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

pub fn distance<const D: usize>(a: &Point<D>, b: &Point<D>) -> f64 {
    (0..D).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

// serde has no blanket impls for const-generic arrays, so points go through
// plain sequences.
pub(crate) mod serde_point {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(p: &[f64; D], s: S) -> Result<S::Ok, S::Error> {
        p.as_slice().serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(
        d: De,
    ) -> Result<[f64; D], De::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| De::Error::custom(format!("expected {D} coordinates, got {}", v.len())))
    }
}

pub(crate) mod serde_points {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(
        p: &[[f64; D]],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<&[f64]> = p.iter().map(|x| x.as_slice()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(
        d: De,
    ) -> Result<Vec<[f64; D]>, De::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        v.into_iter()
            .map(|x| {
                let n = x.len();
                x.try_into()
                    .map_err(|_| De::Error::custom(format!("expected {D} coordinates, got {n}")))
            })
            .collect()
    }
}
