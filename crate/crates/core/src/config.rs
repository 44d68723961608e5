//! File-backed run configuration shared by every CLI verb.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::InitMode;
use crate::sim::{SceneSpec, MIN_SIZE};
use crate::train::TrainConfig;

/// Synthetic setup and dataset size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scene seed. Default 7.
    pub seed: u64,
    /// Square image side in pixels. Default 128.
    pub size: usize,
    /// Training pairs. Default 32.
    pub n_train: usize,
    /// Test pairs. Default 8.
    pub n_test: usize,
    /// Overrides the drawn sensor noise level. Default 0.005.
    pub noise_sigma: Option<f64>,
    /// Distortion-free scene. Default false.
    pub ideal: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 7,
            size: 128,
            n_train: 32,
            n_test: 8,
            noise_sigma: Some(0.005),
            ideal: false,
        }
    }
}

impl DataConfig {
    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            height: self.size,
            width: self.size,
            noise_sigma: self.noise_sigma,
            ideal: self.ideal,
        }
    }
}

/// Default artifact locations, relative to the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Default "data".
    pub dataset: String,
    /// Default "model.cmpk".
    pub checkpoint: String,
    /// Default "out".
    pub out: String,
    /// Checkpoint to start training from instead of a fresh initialization.
    /// Default none.
    pub warm_start: Option<String>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data".into(),
            checkpoint: "model.cmpk".into(),
            out: "out".into(),
            warm_start: None,
        }
    }
}

/// Desk-scale defaults: 128×128, k = 2, 32 train / 8 test, 300 iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                iters: 300,
                ..TrainConfig::default()
            },
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// The full-size setting: 1024×1024, k = 4, 500 train / 200 test,
    /// 2000 iterations, standard-normal refinement weights and an unscaled
    /// residual.
    pub fn full_scale() -> Self {
        let mut cfg = RunConfig {
            data: DataConfig {
                size: 1024,
                n_train: 500,
                n_test: 200,
                ..DataConfig::default()
            },
            train: TrainConfig {
                init_mode: InitMode::StandardNormal,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        cfg.model.k = 4;
        cfg.model.ganet.refine_net.residual_scale = 1.0;
        cfg
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let multiple = 4 * self.model.k;
        if self.data.size < MIN_SIZE || self.data.size % multiple != 0 {
            return Err(Error::arg(format!(
                "image size {} must be at least {MIN_SIZE} and a multiple of {multiple}",
                self.data.size
            )));
        }
        Ok(())
    }
}
