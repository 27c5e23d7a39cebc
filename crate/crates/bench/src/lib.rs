//! Benchmark fixtures shared by the criterion targets.

use superres_core::{synthesize, Gaussian, ObservationSet, SamplingMeasure, SourceConfiguration};

/// Noiseless observation of sources `locs` (unit mass) under a Gaussian of
/// width 0.1 sampled at `n` uniform points of `[0, 1]`.
pub fn fixture(locs: &[f64], n: usize) -> (Gaussian, ObservationSet<1>, SourceConfiguration<1>) {
    let psf = Gaussian::new(0.1).expect("valid width");
    let sampling = SamplingMeasure::uniform_grid(n, 0.0, 1.0).expect("valid grid");
    let cfg = SourceConfiguration::new(locs.iter().map(|&t| [t]).collect(), vec![1.0; locs.len()])
        .expect("valid sources");
    let obs = synthesize(&cfg, &psf, &sampling);
    (psf, obs, cfg)
}
