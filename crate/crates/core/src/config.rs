//! Run configuration: one JSON document drives every subcommand, with a
//! single master seed feeding named sub-streams.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::CohortConfig;
use crate::error::{Error, Result};
use crate::features::{C3Strategy, ModelVariant, RawTimeVariant};
use crate::gbt::GbtParams;
use crate::poppk::PopulationPriors;

/// Fixed- or flexible-time modelling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fixed3,
    Full16,
    Flexible,
}

/// How a flexible-mode model handles the roaming last sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Approach {
    RawTimeFeatures { variant: RawTimeVariant },
    EstimateC3 { strategy: C3Strategy },
}

/// Model selection: mode plus the flexible-mode approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    #[serde(default)]
    pub approach: Option<Approach>,
    /// Add the seven demographic covariates (fixed3 mode only).
    #[serde(default)]
    pub demographics: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { mode: Mode::Full16, approach: None, demographics: false }
    }
}

impl ModelConfig {
    pub fn from_variant(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::Full16 => {
                Self { mode: Mode::Full16, approach: None, demographics: false }
            }
            ModelVariant::Fixed3 { demographics } => {
                Self { mode: Mode::Fixed3, approach: None, demographics }
            }
            ModelVariant::FlexibleRaw { variant } => Self {
                mode: Mode::Flexible,
                approach: Some(Approach::RawTimeFeatures { variant }),
                demographics: false,
            },
            ModelVariant::FlexibleEstimated { strategy } => Self {
                mode: Mode::Flexible,
                approach: Some(Approach::EstimateC3 { strategy }),
                demographics: false,
            },
        }
    }

    /// Resolve to a concrete variant, rejecting invalid combinations.
    pub fn variant(&self) -> Result<ModelVariant> {
        match (self.mode, self.approach) {
            (Mode::Full16, None) => {
                if self.demographics {
                    Err(Error::Config(
                        "demographics toggle applies to fixed3 mode only".into(),
                    ))
                } else {
                    Ok(ModelVariant::Full16)
                }
            }
            (Mode::Fixed3, None) => {
                Ok(ModelVariant::Fixed3 { demographics: self.demographics })
            }
            (Mode::Flexible, Some(Approach::RawTimeFeatures { variant })) => {
                Ok(ModelVariant::FlexibleRaw { variant })
            }
            (Mode::Flexible, Some(Approach::EstimateC3 { strategy })) => {
                Ok(ModelVariant::FlexibleEstimated { strategy })
            }
            (Mode::Flexible, None) => Err(Error::Config(
                "flexible mode needs an approach (raw_time_features or estimate_c3)".into(),
            )),
            (_, Some(_)) => Err(Error::Config(
                "approach settings require flexible mode".into(),
            )),
        }
    }
}

/// Cartesian hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub k: usize,
    pub learning_rates: Vec<f64>,
    pub max_depths: Vec<u32>,
    pub n_rounds: Vec<u32>,
    pub min_child_weights: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub subsamples: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            k: 5,
            learning_rates: vec![0.05, 0.1, 0.3],
            max_depths: vec![2, 3, 4],
            n_rounds: vec![100, 300],
            min_child_weights: vec![1.0, 5.0],
            lambdas: vec![1.0, 10.0],
            subsamples: vec![0.8, 1.0],
        }
    }
}

impl GridConfig {
    /// A 2×2×2 grid for quick consolidated reports.
    pub fn small() -> Self {
        Self {
            k: 5,
            learning_rates: vec![0.1, 0.3],
            max_depths: vec![2, 3],
            n_rounds: vec![100, 300],
            min_child_weights: vec![1.0],
            lambdas: vec![1.0],
            subsamples: vec![1.0],
        }
    }

    pub fn expand(&self, seed: u64) -> Vec<GbtParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &max_depth in &self.max_depths {
                for &n_rounds in &self.n_rounds {
                    for &min_child_weight in &self.min_child_weights {
                        for &lambda in &self.lambdas {
                            for &subsample in &self.subsamples {
                                out.push(GbtParams {
                                    n_rounds,
                                    learning_rate,
                                    max_depth,
                                    min_child_weight,
                                    lambda,
                                    gamma: 0.0,
                                    subsample,
                                    colsample: 1.0,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("grid k must be ≥ 2".into()));
        }
        let empty = self.learning_rates.is_empty()
            || self.max_depths.is_empty()
            || self.n_rounds.is_empty()
            || self.min_child_weights.is_empty()
            || self.lambdas.is_empty()
            || self.subsamples.is_empty();
        if empty {
            return Err(Error::Config("grid has an empty factor".into()));
        }
        Ok(())
    }
}

/// Master configuration for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker cap for parallel folds and grid points; None = all cores.
    pub threads: Option<usize>,
    pub model: ModelConfig,
    /// Fixed hyperparameters for leave-one-patient-out CV and `train`.
    pub gbt: GbtParams,
    /// Grid used by `tune` and prospective evaluation.
    pub grid: GridConfig,
    /// Smaller grid used per variant by the consolidated `report`.
    pub report_grid: GridConfig,
    pub priors: PopulationPriors,
    pub cohort_dev: CohortConfig,
    pub cohort_test: CohortConfig,
    /// Cap on background rows for Shapley attribution.
    pub shap_background_max: usize,
    /// Variants compared by the consolidated report.
    pub report_variants: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: None,
            model: ModelConfig::default(),
            gbt: GbtParams::default(),
            grid: GridConfig::default(),
            report_grid: GridConfig::small(),
            priors: PopulationPriors::default(),
            cohort_dev: CohortConfig::dev_default(),
            cohort_test: CohortConfig::test_default(),
            shap_background_max: 100,
            report_variants: vec![
                "full16".into(),
                "fixed3".into(),
                "fixed3_demog".into(),
                "flex_delta".into(),
                "flex_est_linear".into(),
                "flex_est_reverse_linear".into(),
                "flex_est_loglinear".into(),
                "flex_est_poppk".into(),
            ],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.variant()?;
        self.gbt.validate()?;
        self.grid.validate()?;
        self.report_grid.validate()?;
        self.priors.validate()?;
        self.cohort_dev.validate()?;
        self.cohort_test.validate()?;
        if self.shap_background_max == 0 {
            return Err(Error::Config("shap_background_max must be ≥ 1".into()));
        }
        for v in &self.report_variants {
            ModelVariant::parse(v)?;
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form; stamps every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Deterministic sub-seed for a named random stream.
    pub fn named_seed(&self, stream: &str) -> u64 {
        named_seed(self.seed, stream)
    }
}

pub fn named_seed(master: u64, stream: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}:{stream}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
