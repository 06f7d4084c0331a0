//! Experiment configuration, drivers and the command-line front end.

mod cli;
mod experiments;

pub use cli::{cli, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
pub use experiments::{
    compare_curvatures, run_bound_check, BoundCheckOutcome, CurvatureComparison, COMPARED_KINDS,
};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_idx, synth_blobs, Dataset};
use crate::error::{Error, Result};
use crate::fcnn::{Activation, Criterion, FcnnModel};
use crate::trainer::{Grid, Optimizer, TrainConfig};

/// Eight layers, mirroring a deep image classifier at desk scale.
pub const DESK_ARCHITECTURE: [usize; 9] = [64, 32, 16, 16, 8, 8, 8, 8, 10];
/// The full-width Cifar-10 style network.
pub const FULL_ARCHITECTURE: [usize; 9] = [3072, 1024, 512, 256, 128, 64, 32, 16, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: usize,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckSpec {
    /// Layer `t` whose `W^t` and `h^{(t-1)'}` enter the bound; `2 <= t <= k`.
    #[serde(default = "default_bound_layer")]
    pub layer: usize,
    /// Defaults to the activation's Lipschitz constant.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_bound_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub trials: usize,
}

fn default_bound_layer() -> usize {
    2
}
fn default_bound_batch() -> usize {
    8
}
fn default_one() -> usize {
    1
}

impl Default for BoundCheckSpec {
    fn default() -> Self {
        Self {
            layer: default_bound_layer(),
            lipschitz: None,
            batch_size: default_bound_batch(),
            trials: 1,
        }
    }
}

/// A whole experiment as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// `n_0, ..., n_k`; the last width is the class count.
    #[serde(default = "default_architecture")]
    pub architecture: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_criterion")]
    pub criterion: Criterion,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Min-max rescale features to `[0, 1]` after loading.
    #[serde(default)]
    pub normalize: bool,
    /// Number of parameter states `θ⁰..θ^{s-1}` averaged in the error table.
    #[serde(default = "default_steps")]
    pub comparison_steps: usize,
    /// Epochs of training before the comparison trajectory starts.
    #[serde(default)]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub bound_check: Option<BoundCheckSpec>,
}

fn default_architecture() -> Vec<usize> {
    DESK_ARCHITECTURE.to_vec()
}
fn default_activation() -> Activation {
    Activation::Sigmoid
}
fn default_criterion() -> Criterion {
    Criterion::CrossEntropySoftmax
}
fn default_optimizer() -> Optimizer {
    Optimizer::SgdMomentum
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    100
}
fn default_epochs() -> usize {
    10
}
fn default_data() -> DataSource {
    DataSource::Blobs {
        classes: 10,
        dim: 64,
        per_class: 100,
        spread: 0.15,
        seed: 0,
    }
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_steps() -> usize {
    10
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture.len() < 2 || self.architecture.contains(&0) {
            return Err(Error::config(format!(
                "architecture needs at least two positive widths, got {:?}",
                self.architecture
            )));
        }
        if self.comparison_steps == 0 {
            return Err(Error::config("comparison_steps must be at least 1"));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            criterion: self.criterion,
            optimizer: self.optimizer,
            record_wall_time: true,
        }
    }

    /// Loads or generates the data and splits it with the experiment seed.
    pub fn dataset(&self) -> Result<Dataset> {
        let mut ds = match &self.data {
            DataSource::Blobs {
                classes,
                dim,
                per_class,
                spread,
                seed,
            } => synth_blobs(*classes, *dim, *per_class, *spread, *seed)?,
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
            DataSource::Csv {
                path,
                label_column,
                has_header,
            } => load_csv(path, *label_column, *has_header)?,
        };
        if self.normalize {
            ds.min_max_normalize();
        }
        let classes = *self.architecture.last().expect("validated");
        if ds.num_classes > classes {
            return Err(Error::config(format!(
                "data has {} classes but the network has {classes} outputs",
                ds.num_classes
            )));
        }
        ds.num_classes = classes;
        ds.split(self.test_fraction, self.seed)
    }

    /// Xavier-initialized model from the experiment seed.
    pub fn init_model(&self) -> Result<FcnnModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        FcnnModel::xavier(&self.architecture, self.activation, &mut rng)
    }
}
