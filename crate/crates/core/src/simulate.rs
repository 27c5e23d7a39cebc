//! Synthetic observations and the randomized image populations used by the
//! experiments.
//!
//! Randomness comes from ChaCha8 seeded through `seed_from_u64`; population
//! item `i` reads from stream `i` of that generator, so items can be built in
//! any order (or in parallel) with identical results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Domain, Gaussian, Point, Psf, SamplingMeasure, SourceConfiguration};

/// Sampled signal `x(s_j)` on a sampling measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet<const D: usize> {
    pub sampling: SamplingMeasure<D>,
    pub values: Vec<f64>,
    /// Standard deviation of the additive noise, 0 when noiseless.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl<const D: usize> ObservationSet<D> {
    pub fn new(sampling: SamplingMeasure<D>, values: Vec<f64>) -> Result<Self> {
        if sampling.len() != values.len() {
            return invalid(format!(
                "{} samples but {} values",
                sampling.len(),
                values.len()
            ));
        }
        Ok(Self {
            sampling,
            values,
            noise_sigma: 0.0,
            seed: 0,
        })
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }
}

/// Noiseless samples `x(s_j) = Σ_i c_i ψ(s_j, t_i)`.
pub fn synthesize<const D: usize>(
    config: &SourceConfiguration<D>,
    psf: &impl Psf<D>,
    sampling: &SamplingMeasure<D>,
) -> ObservationSet<D> {
    let values = sampling
        .points()
        .iter()
        .map(|s| {
            config
                .locations()
                .iter()
                .zip(config.amplitudes())
                .map(|(t, c)| c * psf.eval(s, t))
                .sum()
        })
        .collect();
    ObservationSet {
        sampling: sampling.clone(),
        values,
        noise_sigma: 0.0,
        seed: 0,
    }
}

/// Adds i.i.d. `N(0, noise_sigma²)` noise drawn from a generator seeded with `seed`.
pub fn add_noise<const D: usize>(
    obs: &ObservationSet<D>,
    noise_sigma: f64,
    seed: u64,
) -> Result<ObservationSet<D>> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return invalid(format!("noise level must be >= 0, got {noise_sigma}"));
    }
    let mut out = obs.clone();
    if noise_sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, noise_sigma).expect("validated above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.values.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    out.noise_sigma = obs.noise_sigma.hypot(noise_sigma);
    out.seed = seed;
    Ok(out)
}

/// Source layout of a 1D population on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PopulationKind {
    /// `sources` points uniform in the interior `(0.1, 0.9)`.
    Central { sources: usize },
    /// `per_region` points in each of `(0, 0.1)` and `(0.9, 1)`.
    Boundary { per_region: usize },
    /// Two sources at `x ± d/2` with `x` uniform on `[0.1 + d/2, 0.9 - d/2]`.
    Pair { separation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub kind: PopulationKind,
    pub count: usize,
    pub sigma: f64,
    /// Number of equispaced samples covering `[0, 1]`.
    pub n: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
}

pub const INTERIOR: (f64, f64) = (0.1, 0.9);
pub const LEFT_BORDER: (f64, f64) = (0.0, 0.1);
pub const RIGHT_BORDER: (f64, f64) = (0.9, 1.0);

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return invalid("population count must be > 0");
        }
        if self.n == 0 {
            return invalid("grid size n must be >= 1");
        }
        Gaussian::new(self.sigma)?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return invalid("noise level must be >= 0");
        }
        match self.kind {
            PopulationKind::Pair { separation } => {
                if !(separation.is_finite() && separation > 0.0) {
                    return invalid("pair separation must be > 0");
                }
                if separation >= INTERIOR.1 - INTERIOR.0 {
                    return invalid(format!(
                        "pair separation {separation} does not fit inside (0.1, 0.9)"
                    ));
                }
            }
            PopulationKind::Central { sources: 0 } => {
                return invalid("central population needs at least one source")
            }
            PopulationKind::Boundary { per_region: 0 } => {
                return invalid("boundary population needs at least one source per region")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn psf(&self) -> Result<Gaussian> {
        Gaussian::new(self.sigma)
    }

    pub fn sampling(&self) -> Result<SamplingMeasure<1>> {
        SamplingMeasure::uniform_grid(self.n, 0.0, 1.0)
    }
}

/// One simulated image together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationItem<const D: usize> {
    pub truth: SourceConfiguration<D>,
    pub obs: ObservationSet<D>,
}

pub(crate) fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_sorted(rng: &mut impl Rng, k: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Builds `spec.count` images; all amplitudes are 1.
pub fn gen_population(spec: &PopulationSpec) -> Result<Vec<PopulationItem<1>>> {
    spec.validate()?;
    let psf = spec.psf()?;
    let sampling = spec.sampling()?;
    (0..spec.count)
        .map(|i| {
            let mut rng = item_rng(spec.seed, i);
            let locs: Vec<f64> = match spec.kind {
                PopulationKind::Central { sources } => draw_sorted(&mut rng, sources, INTERIOR),
                PopulationKind::Boundary { per_region } => {
                    let mut v = draw_sorted(&mut rng, per_region, LEFT_BORDER);
                    v.extend(draw_sorted(&mut rng, per_region, RIGHT_BORDER));
                    v
                }
                PopulationKind::Pair { separation } => {
                    let half = 0.5 * separation;
                    let x = rng.random_range(INTERIOR.0 + half..=INTERIOR.1 - half);
                    let left = x - half;
                    vec![left, left + separation]
                }
            };
            let amplitudes = vec![1.0; locs.len()];
            let truth = SourceConfiguration::new(locs.into_iter().map(|t| [t]).collect(), amplitudes)?;
            let noise_seed = rng.next_u64();
            let clean = synthesize(&truth, &psf, &sampling);
            let obs = add_noise(&clean, spec.noise_sigma, noise_seed)?;
            Ok(PopulationItem { truth, obs })
        })
        .collect()
}

/// 2D single-molecule style frames: `sources` emitters uniform in the unit
/// square minus a `margin` band, Gaussian PSF sampled at pixel centers, and
/// additive Gaussian read noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smlm2dSpec {
    pub count: usize,
    pub sources: usize,
    /// Pixels per side of the square sensor covering the unit square.
    pub pixels: usize,
    /// PSF width in pixels.
    pub sigma_pixels: f64,
    pub noise_sigma: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for Smlm2dSpec {
    fn default() -> Self {
        Self {
            count: 1,
            sources: 12,
            pixels: 32,
            sigma_pixels: 1.5,
            noise_sigma: 0.01,
            margin: 0.1,
            seed: 0,
        }
    }
}

impl Smlm2dSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.pixels == 0 {
            return invalid("2D population needs count > 0 and pixels > 0");
        }
        if !(self.margin >= 0.0 && self.margin < 0.5) {
            return invalid("margin must lie in [0, 0.5)");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return invalid("noise level must be >= 0");
        }
        Gaussian::new(self.sigma_pixels)?;
        Ok(())
    }

    pub fn pixel_size(&self) -> f64 {
        1.0 / self.pixels as f64
    }

    pub fn psf(&self) -> Result<Gaussian> {
        Gaussian::new(self.sigma_pixels * self.pixel_size())
    }

    pub fn sampling(&self) -> Result<SamplingMeasure<2>> {
        SamplingMeasure::pixel_grid(self.pixels, self.pixels, &Domain::unit())
    }
}

pub fn gen_smlm2d(spec: &Smlm2dSpec) -> Result<Vec<PopulationItem<2>>> {
    spec.validate()?;
    let psf = spec.psf()?;
    let sampling = spec.sampling()?;
    let (lo, hi) = (spec.margin, 1.0 - spec.margin);
    (0..spec.count)
        .map(|i| {
            let mut rng = item_rng(spec.seed, i);
            let locs: Vec<Point<2>> = (0..spec.sources)
                .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi)])
                .collect();
            let truth = SourceConfiguration::new(locs, vec![1.0; spec.sources])?;
            let noise_seed = rng.next_u64();
            let clean = synthesize(&truth, &psf, &sampling);
            let obs = add_noise(&clean, spec.noise_sigma, noise_seed)?;
            Ok(PopulationItem { truth, obs })
        })
        .collect()
}
