//! Gridless sparse deconvolution of nonnegative point sources.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certificate;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ext;
pub mod model;
pub mod simulate;
pub mod solver;
pub mod tsystems;

pub use certificate::{
    certificate_margin, certificate_value, check_conditions, solve_certificate, Branch, Certificate, ConditionReport,
    KernelEval, MarginReport,
};
pub use error::{Error, Result};
pub use experiment::{
    run_population, run_smlm2d, NOISY_MIN_DECREASE_REL, run_spec, run_sweep, spearman, ImageResult, PopulationRun, RunSettings, Summary,
    SweepRow, TauPolicy,
};
pub use eval::{f_score, greedy_match, score, MatchResult, MatchedPair};
pub use model::{
    distance, psf_deriv_t, psf_eval, weight, weight_grad, Domain, Gaussian, Point, Psf,
    SamplingMeasure, SourceConfiguration, Weighting,
};
pub use simulate::{
    add_noise, gen_population, gen_smlm2d, synthesize, ObservationSet, PopulationItem,
    PopulationKind, PopulationSpec, Smlm2dSpec,
};
pub use solver::{
    duality_gap, fully_corrective, lmo, local_refine, objective, residual_gradient, solve, Atom,
    AtomicMeasure, Problem, SolveResult, SolverOptions,
};
