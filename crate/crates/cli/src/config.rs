//! Experiment configuration files and built-in presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigcnn::network::DeepCNetConfig;
use sigcnn::raster::RasterConfig;
use sigcnn::signature::signature_dimension;
use sigcnn::{Error, Result};

/// Where the train and test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Pendigits {
        train: PathBuf,
        test: PathBuf,
    },
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    StrokesJsonl {
        train: PathBuf,
        test: PathBuf,
    },
}

impl DatasetSpec {
    pub fn is_images(&self) -> bool {
        matches!(self, DatasetSpec::Mnist { .. })
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DatasetSpec::Pendigits { train, test } | DatasetSpec::StrokesJsonl { train, test } => {
                vec![train, test]
            }
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
        }
    }
}

/// Stroke rasterization settings; the grid side follows from the network depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSettings {
    /// Character scale `n`.
    pub scale: usize,
    /// Signature truncation level `m`.
    pub level: usize,
    /// Window half-length; `n / 5` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_step")]
    pub sample_step: f64,
}

fn default_step() -> f64 {
    1.0
}

impl RasterSettings {
    pub fn for_side(&self, side: usize) -> RasterConfig {
        let mut cfg = RasterConfig::new(side, self.scale, self.level);
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        cfg.sample_step = self.sample_step;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Random integer shifts of up to `translate_shift` cells.
    Translate,
    /// Random scaling, rotation and shift.
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Use only the first `train_limit` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    pub network: DeepCNetConfig,
    /// Required for stroke datasets, absent for images.
    #[serde(default)]
    pub raster: Option<RasterSettings>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub augmentation: Augmentation,
    #[serde(default = "default_translate_shift")]
    pub translate_shift: i64,
    /// Initialization seed; shuffling, dropout and augmentation streams are
    /// derived from it.
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Record elapsed seconds per epoch. When false the column holds 0 so
    /// that repeated runs give identical files.
    #[serde(default = "default_true")]
    pub log_wall_seconds: bool,
}

fn default_translate_shift() -> i64 {
    2
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let mut cfg = RunConfig::from_json(&fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Prefixes every relative path with `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in self.dataset.paths_mut() {
            fix(p);
        }
        fix(&mut self.checkpoint);
        fix(&mut self.metrics);
    }

    pub fn side(&self) -> usize {
        self.network.input_side()
    }

    pub fn raster_config(&self) -> Option<RasterConfig> {
        self.raster.map(|r| r.for_side(self.side()))
    }

    /// Cross-field checks: input channels must match what the dataset
    /// produces, and the optimizer settings must be usable.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        let channels = match (&self.raster, self.dataset.is_images()) {
            (None, true) => 1,
            (Some(_), true) => return bad("image datasets take no raster settings".into()),
            (None, false) => return bad("stroke datasets need raster settings".into()),
            (Some(r), false) => {
                r.for_side(self.side()).validate()?;
                signature_dimension(r.level, 2)
            }
        };
        if self.network.input_channels != channels {
            return bad(format!(
                "network.input_channels is {}, the dataset produces {channels}",
                self.network.input_channels
            ));
        }
        if self.dataset.is_images() && self.augmentation == Augmentation::Affine {
            return bad("affine augmentation applies to stroke data only".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} is not usable", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        if self.translate_shift < 0 {
            return bad("translate_shift must be non-negative".into());
        }
        Ok(())
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = [
    "pendigits-m0",
    "pendigits-m1",
    "pendigits-m2",
    "pendigits-m3",
    "mnist-small",
];

/// Built-in configurations. `data_dir` holds `pendigits/` and `mnist/` as
/// laid out by `scripts/fetch_data.sh`; outputs go to `out_dir`.
pub fn preset(name: &str, data_dir: &Path, out_dir: &Path) -> Result<RunConfig> {
    let cfg = if let Some(m) = name.strip_prefix("pendigits-m") {
        let level: usize = m
            .parse()
            .ok()
            .filter(|&m| m <= 3)
            .ok_or_else(|| Error::Config(format!("unknown preset {name}")))?;
        RunConfig {
            dataset: DatasetSpec::Pendigits {
                train: data_dir.join("pendigits/pendigits.tra"),
                test: data_dir.join("pendigits/pendigits.tes"),
            },
            train_limit: None,
            test_limit: None,
            network: DeepCNetConfig::new(3, 10, signature_dimension(level, 2), 10),
            raster: Some(RasterSettings {
                scale: 10,
                level,
                delta: None,
                sample_step: 1.0,
            }),
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            lr_decay: 0.95,
            augmentation: Augmentation::None,
            translate_shift: 2,
            seed: 1,
            checkpoint: out_dir.join(format!("{name}.sdcn")),
            metrics: out_dir.join(format!("{name}.csv")),
            log_wall_seconds: true,
        }
    } else if name == "mnist-small" {
        let mnist = data_dir.join("mnist");
        RunConfig {
            dataset: DatasetSpec::Mnist {
                train_images: mnist.join("train-images-idx3-ubyte"),
                train_labels: mnist.join("train-labels-idx1-ubyte"),
                test_images: mnist.join("t10k-images-idx3-ubyte"),
                test_labels: mnist.join("t10k-labels-idx1-ubyte"),
            },
            train_limit: Some(10_000),
            test_limit: None,
            network: DeepCNetConfig::new(3, 10, 1, 10),
            raster: None,
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            lr_decay: 0.9,
            augmentation: Augmentation::None,
            translate_shift: 2,
            seed: 1,
            checkpoint: out_dir.join(format!("{name}.sdcn")),
            metrics: out_dir.join(format!("{name}.csv")),
            log_wall_seconds: true,
        }
    } else {
        return Err(Error::Config(format!(
            "unknown preset {name}; known: {}",
            PRESETS.join(", ")
        )));
    };
    cfg.validate()?;
    Ok(cfg)
}
