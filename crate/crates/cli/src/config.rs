//! Experiment configuration read from a TOML file.
//!
//! Every section is optional and unknown keys are rejected. Command-line
//! flags override the values read here.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/gmm"
//!
//! [gmm]
//! q = 0.75
//!
//! [train]
//! budget = 16.0
//! iterations = 4000
//! constraint = "augmented-lagrangian"
//!
//! [sweep]
//! kind = "gmm"
//! budgets = [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0]
//! ```

use std::path::{Path, PathBuf};

use cfur::data::TabularSchema;
use cfur::distributions::GaussianMixtureSpec;
use cfur::dp::{TABLE_DELTA, TABLE_DIMENSION, TABLE_DISTORTIONS};
use cfur::experiment::{CorrelatedSpec, FairSweepConfig, GmmSweepConfig, MiFeatures};
use cfur::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub gmm: GmmSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub theory: TheorySection,
    pub dp: DpSection,
    pub mi: MiSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: None,
            gmm: GmmSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            theory: TheorySection::default(),
            dp: DpSection::default(),
            mi: MiSection::default(),
        }
    }
}

/// Gaussian mixture used when no dataset file is given. Without explicit
/// `mu` and `sigma_sq` the 32-dimensional benchmark mixture is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub q: f64,
    pub mu: Option<Vec<f64>>,
    pub sigma_sq: Option<Vec<f64>>,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        Self {
            q: 0.75,
            mu: None,
            sigma_sq: None,
            train_size: 20_000,
            test_size: 2_000,
        }
    }
}

impl GmmSection {
    pub fn spec(&self) -> anyhow::Result<GaussianMixtureSpec> {
        let spec = match (&self.mu, &self.sigma_sq) {
            (None, None) => GaussianMixtureSpec::benchmark(self.q),
            (Some(mu), Some(var)) => GaussianMixtureSpec::new(self.q, mu.clone(), var.clone())?,
            _ => anyhow::bail!("gmm.mu and gmm.sigma_sq must be given together"),
        };
        spec.validate_strict().map_err(|e| anyhow::anyhow!("gmm.q: {e}"))?;
        Ok(spec)
    }
}

/// Dataset sources, in priority order: saved `train`/`test` files, then a
/// raw `tabular` CSV split by `test_fraction`, then the `[gmm]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub tabular: Option<PathBuf>,
    pub schema: TabularSchema,
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    Affine,
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: EncoderKind,
    pub encoder_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub adversary_hidden: Vec<usize>,
    /// Target classifier of task-aware runs and predictor of fair-classifier runs.
    pub target_hidden: Vec<usize>,
    pub downstream_hidden: Vec<usize>,
    pub downstream_epochs: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Affine,
            encoder_hidden: vec![32],
            noise_dim: 8,
            adversary_hidden: vec![16, 8],
            target_hidden: vec![16],
            downstream_hidden: vec![16],
            downstream_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Gaussian mixture with MAP-oracle and theory columns.
    #[default]
    Gmm,
    /// Synthetic correlated population with downstream fairness columns.
    Fair,
    /// Configured dataset files with downstream fairness columns.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub budgets: Vec<f64>,
    pub mi_neighbors: Option<usize>,
    pub mi_features: MiFeatures,
    pub mi_components: Option<usize>,
    pub population: CorrelatedSpec,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: SweepKind::Gmm,
            budgets: GmmSweepConfig::default().budgets,
            mi_neighbors: Some(cfur::mi::DEFAULT_NEIGHBORS),
            mi_features: MiFeatures::default(),
            mi_components: Some(2),
            population: CorrelatedSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub budgets: Vec<f64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            budgets: (0..=32).map(f64::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub dim: usize,
    pub budgets: Vec<f64>,
    pub delta: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            dim: TABLE_DIMENSION,
            budgets: TABLE_DISTORTIONS.to_vec(),
            delta: TABLE_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiSection {
    pub k: usize,
    pub pca: Option<usize>,
}

impl Default for MiSection {
    fn default() -> Self {
        Self {
            k: cfur::mi::DEFAULT_NEIGHBORS,
            pca: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    pub fn gmm_sweep(&self) -> GmmSweepConfig {
        GmmSweepConfig {
            q: self.gmm.q,
            budgets: self.sweep.budgets.clone(),
            train_size: self.gmm.train_size,
            test_size: self.gmm.test_size,
            adversary_hidden: self.model.adversary_hidden.clone(),
            train: self.train.clone(),
            mi_neighbors: self.sweep.mi_neighbors,
            mi_features: self.sweep.mi_features,
            mi_components: self.sweep.mi_components,
            seed: self.seed,
        }
    }

    pub fn fair_sweep(&self) -> FairSweepConfig {
        FairSweepConfig {
            population: self.sweep.population.clone(),
            budgets: self.sweep.budgets.clone(),
            train_size: self.gmm.train_size,
            test_size: self.gmm.test_size,
            adversary_hidden: self.model.adversary_hidden.clone(),
            downstream_hidden: self.model.downstream_hidden.clone(),
            downstream_epochs: self.model.downstream_epochs,
            train: self.train.clone(),
            seed: self.seed,
        }
    }
}
