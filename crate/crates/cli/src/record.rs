use serde::{Deserialize, Serialize};
use superres_core::certificate::{Certificate, ConditionReport};
use superres_core::tsystems::{OrderCheck, TsysMonteCarlo};
use superres_core::{PopulationItem, PopulationRun, Weighting};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};

/// Generated images, stored with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub items: Items,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Items {
    #[serde(rename = "1d")]
    OneD(Vec<PopulationItem<1>>),
    #[serde(rename = "2d")]
    TwoD(Vec<PopulationItem<2>>),
}

impl Items {
    pub fn len(&self) -> usize {
        match self {
            Items::OneD(v) => v.len(),
            Items::TwoD(v) => v.len(),
        }
    }
}

impl Dataset {
    pub fn new(config: ExperimentConfig, items: Items) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<const D: usize> {
    /// `None` outside sweeps.
    pub sweep_value: Option<f64>,
    pub run: PopulationRun<D>,
}

/// Everything a `solve`, `sweep` or `demo2d` run produced. Timing is left
/// out so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<const D: usize> {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub weighting: Weighting,
    pub points: Vec<SweepPoint<D>>,
}

impl<const D: usize> RunRecord<D> {
    pub fn new(command: &str, config: ExperimentConfig, weighting: Weighting, points: Vec<SweepPoint<D>>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config,
            weighting,
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyRecord {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub conditions: ConditionReport,
    /// `None` when the interpolation system could not be solved.
    pub certificate: Option<Certificate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRecord {
    pub schema_version: u32,
    pub max_order: usize,
    pub seed: u64,
    pub shifts: Vec<String>,
    pub orders: Vec<OrderCheck>,
    pub f_sequence_error: Option<String>,
    pub p_leading_ok: bool,
    pub monte_carlo: Vec<TsysMonteCarlo>,
    pub passed: bool,
}
