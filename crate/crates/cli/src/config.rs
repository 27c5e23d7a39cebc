use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use superres_core::simulate::{PopulationKind, PopulationSpec, Smlm2dSpec};
use superres_core::{RunSettings, SolverOptions, TauPolicy, Weighting, NOISY_MIN_DECREASE_REL};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Boundary,
    Central,
    Pair,
    Separation,
    Noise,
    Certify,
    Lemmas,
    Demo2d,
}

/// One experiment. Kind-specific fields are ignored by kinds that do not use
/// them; fields left out take the defaults documented on each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Gaussian PSF width. Default 0.1.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Uniform samples on `[0, 1]`. Default 100, or 50 for pair sweeps.
    #[serde(default)]
    pub n: Option<usize>,
    /// Images per population (per sweep value for sweeps). Default 100, or
    /// 20 for pair populations and sweeps, or 1 for `demo2d`.
    #[serde(default)]
    pub count: Option<usize>,
    /// Standard deviation of additive noise. Default 0, or 0.1 for `noise`.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Matching tolerance radius. Default 0.1, or a third of a pixel for
    /// `demo2d`.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Default oracle, or a 15-point scan over `[0.1, 10]` for `noise`.
    #[serde(default)]
    pub tau: Option<TauPolicy>,
    /// Solver tuning. Its `tau` is replaced by the budget from the τ policy.
    /// When absent, `noise` and `demo2d` stop once an iteration gains less
    /// than `NOISY_MIN_DECREASE_REL · Σ x²`; other kinds solve to the gap.
    #[serde(default)]
    pub solver: Option<SolverOptions>,
    /// Sources per image for `central` (default 5) and `demo2d` (default 12).
    #[serde(default)]
    pub sources: Option<usize>,
    /// Sources per boundary region. Default 2.
    #[serde(default = "default_per_region")]
    pub per_region: usize,
    /// Pair separation. Default `σ / 4`.
    #[serde(default)]
    pub separation: Option<f64>,
    /// Sweep values (pair separations). Default `0.1σ, 0.2σ, …, 2σ`.
    #[serde(default)]
    pub separations: Option<Vec<f64>>,
    /// Source locations for `certify`.
    #[serde(default)]
    pub locations: Vec<f64>,
    /// Random tuples for the determinantal check. Default 1000.
    #[serde(default = "default_tuples")]
    pub tuples: usize,
    /// Neighborhood radius for the determinantal check. Default: half the
    /// smallest source gap, at most 0.1.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Highest order for the `f` sequence check. Default 6.
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    /// Largest number of sources for the determinant Monte-Carlo. Default 3.
    #[serde(default = "default_max_m")]
    pub max_m: usize,
    /// Monte-Carlo draws per source count. Default 10000.
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Pixels per side for `demo2d`. Default 32.
    #[serde(default = "default_pixels")]
    pub pixels: usize,
    /// PSF width in pixels for `demo2d`. Default 1.5.
    #[serde(default = "default_sigma_pixels")]
    pub sigma_pixels: f64,
    /// Source-free margin on each side of the `demo2d` frame. Default 0.1.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_sigma() -> f64 {
    0.1
}
fn default_per_region() -> usize {
    2
}
fn default_tuples() -> usize {
    1000
}
fn default_max_order() -> usize {
    6
}
fn default_max_m() -> usize {
    3
}
fn default_draws() -> usize {
    10_000
}
fn default_pixels() -> usize {
    32
}
fn default_sigma_pixels() -> f64 {
    1.5
}
fn default_margin() -> f64 {
    0.1
}

impl ExperimentConfig {
    /// A config of the given kind with every optional field at its default.
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            seed,
            sigma: default_sigma(),
            n: None,
            count: None,
            noise_sigma: None,
            radius: None,
            tau: None,
            solver: None,
            sources: None,
            per_region: default_per_region(),
            separation: None,
            separations: None,
            locations: Vec::new(),
            tuples: default_tuples(),
            rho: None,
            max_order: default_max_order(),
            max_m: default_max_m(),
            draws: default_draws(),
            pixels: default_pixels(),
            sigma_pixels: default_sigma_pixels(),
            margin: default_margin(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Io)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Failure::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Failure::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let check = |r: superres_core::Result<()>| r.map_err(|e| Failure::Validation(e.to_string()));
        match self.experiment {
            ExperimentKind::Boundary
            | ExperimentKind::Central
            | ExperimentKind::Pair => {
                check(self.population_spec(self.separation())?.validate())?;
                check(self.settings(Weighting::Sampled).validate())?;
            }
            ExperimentKind::Separation | ExperimentKind::Noise => {
                let values = self.sweep_values();
                if values.is_empty() {
                    return Err(Failure::Validation("sweep needs at least one separation".into()));
                }
                for d in values {
                    check(self.population_spec(d)?.validate())?;
                }
                check(self.settings(Weighting::Sampled).validate())?;
            }
            ExperimentKind::Certify => {
                if self.locations.is_empty() {
                    return Err(Failure::Validation("certify needs at least one source location".into()));
                }
                if let Some(t) = self.locations.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    return Err(Failure::Validation(format!("source location {t} lies outside [0, 1]")));
                }
                if self.tuples == 0 {
                    return Err(Failure::Validation("tuples must be >= 1".into()));
                }
                check(superres_core::Gaussian::new(self.sigma).map(|_| ()))?;
                if self.n() == 0 {
                    return Err(Failure::Validation("n must be >= 1".into()));
                }
            }
            ExperimentKind::Lemmas => {
                if self.max_order > superres_core::tsystems::MAX_ORDER {
                    return Err(Failure::Validation(format!(
                        "max_order must be <= {}",
                        superres_core::tsystems::MAX_ORDER
                    )));
                }
                if self.draws == 0 {
                    return Err(Failure::Validation("draws must be >= 1".into()));
                }
            }
            ExperimentKind::Demo2d => {
                check(self.smlm2d_spec().validate())?;
                check(self.settings(Weighting::Sampled).validate())?;
            }
        }
        Ok(())
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self.experiment, ExperimentKind::Separation | ExperimentKind::Noise)
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(if self.is_sweep() || self.experiment == ExperimentKind::Pair {
            50
        } else {
            100
        })
    }

    pub fn count(&self) -> usize {
        self.count.unwrap_or(match self.experiment {
            ExperimentKind::Pair | ExperimentKind::Separation | ExperimentKind::Noise => 20,
            ExperimentKind::Demo2d => 1,
            _ => 100,
        })
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
            .unwrap_or(if self.experiment == ExperimentKind::Noise { 0.1 } else { 0.0 })
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(if self.experiment == ExperimentKind::Demo2d {
            1.0 / (3.0 * self.pixels as f64)
        } else {
            0.1
        })
    }

    pub fn tau_policy(&self) -> TauPolicy {
        self.tau.unwrap_or(if self.experiment == ExperimentKind::Noise {
            TauPolicy::DEFAULT_SCAN
        } else {
            TauPolicy::Oracle
        })
    }

    pub fn separation(&self) -> f64 {
        self.separation.unwrap_or(0.25 * self.sigma)
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        self.separations
            .clone()
            .unwrap_or_else(|| (1..=20).map(|k| k as f64 * 0.1 * self.sigma).collect())
    }

    pub fn settings(&self, weighting: Weighting) -> RunSettings {
        RunSettings {
            weighting,
            tau: self.tau_policy(),
            radius: self.radius(),
            solver: self.solver(),
        }
    }

    pub fn solver(&self) -> SolverOptions {
        self.solver.unwrap_or_else(|| match self.experiment {
            ExperimentKind::Noise | ExperimentKind::Demo2d => SolverOptions {
                min_decrease_rel: NOISY_MIN_DECREASE_REL,
                ..SolverOptions::default()
            },
            _ => SolverOptions::default(),
        })
    }

    /// The 1D population this config describes; `separation` is only used
    /// by pair-based kinds.
    pub fn population_spec(&self, separation: f64) -> Result<PopulationSpec, Failure> {
        let kind = match self.experiment {
            ExperimentKind::Central => PopulationKind::Central {
                sources: self.sources.unwrap_or(5),
            },
            ExperimentKind::Boundary => PopulationKind::Boundary {
                per_region: self.per_region,
            },
            ExperimentKind::Pair | ExperimentKind::Separation | ExperimentKind::Noise => {
                PopulationKind::Pair { separation }
            }
            other => {
                return Err(Failure::Validation(format!(
                    "experiment {other:?} does not describe a 1D population"
                )))
            }
        };
        Ok(PopulationSpec {
            kind,
            count: self.count(),
            sigma: self.sigma,
            n: self.n(),
            noise_sigma: self.noise_sigma(),
            seed: self.seed,
        })
    }

    pub fn smlm2d_spec(&self) -> Smlm2dSpec {
        Smlm2dSpec {
            count: self.count(),
            sources: self.sources.unwrap_or(12),
            pixels: self.pixels,
            sigma_pixels: self.sigma_pixels,
            noise_sigma: self.noise_sigma.unwrap_or(0.01),
            margin: self.margin,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::parse(r#"{"schema_version": 1, "experiment": "central", "seed": 3}"#).unwrap();
        assert_eq!(cfg.n(), 100);
        assert_eq!(cfg.count(), 100);
        assert_eq!(cfg.radius(), 0.1);
        assert_eq!(cfg.tau_policy(), TauPolicy::Oracle);
        assert_eq!(cfg, ExperimentConfig::new(ExperimentKind::Central, 3));
    }

    #[test]
    fn noise_defaults() {
        let cfg = ExperimentConfig::new(ExperimentKind::Noise, 0);
        assert_eq!(cfg.noise_sigma(), 0.1);
        assert_eq!(cfg.tau_policy(), TauPolicy::DEFAULT_SCAN);
        assert_eq!(cfg.n(), 50);
        assert_eq!(cfg.sweep_values().len(), 20);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad = r#"{"schema_version": 1, "experiment": "central", "seed": 3, "colour": 1}"#;
        assert!(matches!(ExperimentConfig::parse(bad), Err(Failure::Validation(_))));
        let bad = r#"{"schema_version": 2, "experiment": "central", "seed": 3}"#;
        assert!(matches!(ExperimentConfig::parse(bad), Err(Failure::Validation(_))));
        let missing_seed = r#"{"schema_version": 1, "experiment": "central"}"#;
        assert!(matches!(ExperimentConfig::parse(missing_seed), Err(Failure::Validation(_))));
    }

    #[test]
    fn rejects_out_of_range_values() {
        for body in [
            r#""experiment": "pair", "separation": 0.9"#,
            r#""experiment": "central", "sigma": -1"#,
            r#""experiment": "central", "radius": 0"#,
            r#""experiment": "certify""#,
            r#""experiment": "certify", "locations": [1.5]"#,
            r#""experiment": "lemmas", "max_order": 40"#,
            r#""experiment": "separation", "separations": []"#,
            r#""experiment": "noise", "tau": {"policy": "scan", "points": 0, "lo": 1, "hi": 2}"#,
        ] {
            let text = format!(r#"{{"schema_version": 1, "seed": 0, {body}}}"#);
            assert!(matches!(ExperimentConfig::parse(&text), Err(Failure::Validation(_))), "{body}");
        }
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Noise, 9);
        cfg.tau = Some(TauPolicy::Scan { points: 3, lo: 0.5, hi: 2.0 });
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
