//! Training and evaluation runs driven by a [`RunConfig`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sigcnn::data::{load_mnist_idx, load_pendigits, load_strokes_jsonl, Dataset, LabeledImage, Samples};
use sigcnn::network::{load_checkpoint, save_checkpoint, DeepCNet, SgdMomentum};
use sigcnn::raster::{
    augment_affine, augment_translate, normalize_character, rasterize, Character, RasterConfig, SparseFeatureGrid,
};
use sigcnn::{Error, Result};

use crate::config::{Augmentation, DatasetSpec, RunConfig};

pub const METRICS_HEADER: &str = "epoch,train_loss,test_error,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads one split of the configured dataset, truncated to its limit.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let ds = match (&cfg.dataset, split) {
        (DatasetSpec::Pendigits { train, .. }, Split::Train) => load_pendigits(train)?,
        (DatasetSpec::Pendigits { test, .. }, Split::Test) => load_pendigits(test)?,
        (DatasetSpec::StrokesJsonl { train, .. }, Split::Train) => load_strokes_jsonl(train)?,
        (DatasetSpec::StrokesJsonl { test, .. }, Split::Test) => load_strokes_jsonl(test)?,
        (
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                ..
            },
            Split::Train,
        ) => load_mnist_idx(train_images, train_labels)?,
        (
            DatasetSpec::Mnist {
                test_images,
                test_labels,
                ..
            },
            Split::Test,
        ) => load_mnist_idx(test_images, test_labels)?,
    };
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    Ok(match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    })
}

/// Samples ready to be turned into network inputs.
#[derive(Debug, Clone)]
pub enum Encoder {
    /// Characters already fitted into the scale box at the grid center.
    Strokes {
        raster: RasterConfig,
        characters: Vec<Character>,
    },
    Images {
        side: usize,
        images: Vec<LabeledImage>,
    },
}

impl Encoder {
    pub fn new(cfg: &RunConfig, ds: Dataset) -> Result<Encoder> {
        let side = cfg.side();
        match (ds.samples, cfg.raster_config()) {
            (Samples::Strokes(chars), Some(raster)) => {
                let characters = chars
                    .iter()
                    .map(|c| normalize_character(c, raster.scale, side))
                    .collect::<Result<_>>()?;
                Ok(Encoder::Strokes { raster, characters })
            }
            (Samples::Images(images), None) => Ok(Encoder::Images { side, images }),
            _ => Err(Error::Config("dataset kind does not match raster settings".into())),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Encoder::Strokes { characters, .. } => characters.len(),
            Encoder::Images { images, .. } => images.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> usize {
        match self {
            Encoder::Strokes { characters, .. } => characters[i].label.unwrap_or(0),
            Encoder::Images { images, .. } => images[i].label,
        }
    }

    pub fn grid(&self, i: usize) -> Result<SparseFeatureGrid> {
        match self {
            Encoder::Strokes { raster, characters } => rasterize(&characters[i], raster),
            Encoder::Images { side, images } => Ok(images[i].to_grid(*side, 0, 0)),
        }
    }

    /// Input grid for sample `i` after a random augmentation.
    pub fn augmented_grid<R: Rng + ?Sized>(
        &self,
        i: usize,
        aug: Augmentation,
        max_shift: i64,
        rng: &mut R,
    ) -> Result<SparseFeatureGrid> {
        match (self, aug) {
            (_, Augmentation::None) => self.grid(i),
            (Encoder::Strokes { raster, characters }, Augmentation::Translate) => {
                rasterize(&augment_translate(&characters[i], max_shift, rng)?, raster)
            }
            (Encoder::Strokes { raster, characters }, Augmentation::Affine) => {
                rasterize(&augment_affine(&characters[i], raster.side, rng)?, raster)
            }
            (Encoder::Images { side, images }, Augmentation::Translate) => {
                let dr = rng.gen_range(-max_shift..=max_shift);
                let dc = rng.gen_range(-max_shift..=max_shift);
                Ok(images[i].to_grid(*side, dr, dc))
            }
            (Encoder::Images { .. }, Augmentation::Affine) => {
                Err(Error::Config("affine augmentation applies to stroke data only".into()))
            }
        }
    }

    /// All grids without augmentation, rendered in parallel.
    pub fn all_grids(&self) -> Result<Vec<SparseFeatureGrid>> {
        (0..self.len()).into_par_iter().map(|i| self.grid(i)).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Test-set error counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn errors(&self) -> usize {
        self.total() - (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum::<usize>()
    }

    pub fn error_rate(&self) -> f64 {
        self.errors() as f64 / self.total().max(1) as f64
    }

    pub fn report(&self) -> String {
        let mut s = format!(
            "error rate {:.4}% ({} of {})\nconfusion (rows true, columns predicted):\n",
            100.0 * self.error_rate(),
            self.errors(),
            self.total()
        );
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:5}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

pub fn evaluate(net: &DeepCNet<f32>, grids: &[SparseFeatureGrid], labels: &[usize]) -> Result<Evaluation> {
    let predictions: Vec<usize> = grids.par_iter().map(|g| net.predict(g)).collect::<Result<_>>()?;
    let classes = net.config().classes;
    let mut confusion = vec![vec![0; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    Ok(Evaluation { confusion })
}

/// One metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.3}",
            self.epoch, self.train_loss, self.test_error, self.wall_seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: DeepCNet<f32>,
    pub records: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_test_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_error)
    }
}

/// Path of the lowest-test-error checkpoint kept next to the final one.
pub fn best_checkpoint_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_stem().unwrap_or_default().to_os_string();
    name.push(".best.sdcn");
    checkpoint.with_file_name(name)
}

fn check_classes(net_classes: usize, ds: &Dataset, spec: &DatasetSpec) -> Result<()> {
    let fits = match spec {
        DatasetSpec::StrokesJsonl { .. } => ds.class_count <= net_classes,
        _ => ds.class_count == net_classes,
    };
    if fits {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: format!("{net_classes} classes in the network"),
            actual: format!("{} classes in the dataset", ds.class_count),
        })
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

/// Runs the configured training. After every epoch a metrics row is
/// appended (and flushed) and `progress` is called. The final network is
/// saved to the checkpoint path; the best one so far to
/// [`best_checkpoint_path`]. On divergence the rows written so far remain.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ds = load_split(cfg, Split::Train)?;
    let test_ds = load_split(cfg, Split::Test)?;
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::EmptyDataset("train or test split".into()));
    }
    check_classes(cfg.network.classes, &train_ds, &cfg.dataset)?;
    check_classes(cfg.network.classes, &test_ds, &cfg.dataset)?;
    let train_set = Encoder::new(cfg, train_ds)?;
    let test_set = Encoder::new(cfg, test_ds)?;
    let test_grids = test_set.all_grids()?;
    let test_labels = test_set.labels();
    let train_labels = train_set.labels();
    let fixed_train = match cfg.augmentation {
        Augmentation::None => Some(train_set.all_grids()?),
        _ => None,
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(1);
    let mut net = DeepCNet::<f32>::new(cfg.network.clone(), &mut init_rng)?;
    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);

    create_parent(&cfg.metrics)?;
    create_parent(&cfg.checkpoint)?;
    let mut metrics = BufWriter::new(File::create(&cfg.metrics)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;

    let best_path = best_checkpoint_path(&cfg.checkpoint);
    let mut best = f64::INFINITY;
    let mut records = Vec::new();
    let started = Instant::now();
    for epoch in 1..=cfg.epochs {
        opt.learning_rate = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1);
        let shuffle_seed = train_rng.gen();
        let mut loss_sum = 0.0;
        for batch in sigcnn::data::minibatches(train_set.len(), cfg.batch_size, shuffle_seed) {
            let owned: Vec<SparseFeatureGrid> = match &fixed_train {
                Some(_) => Vec::new(),
                None => batch
                    .iter()
                    .map(|&i| train_set.augmented_grid(i, cfg.augmentation, cfg.translate_shift, &mut train_rng))
                    .collect::<Result<_>>()?,
            };
            let samples: Vec<(&SparseFeatureGrid, usize)> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let g = match &fixed_train {
                        Some(all) => &all[i],
                        None => &owned[j],
                    };
                    (g, train_labels[i])
                })
                .collect();
            loss_sum += opt.train_batch(&mut net, &samples, &mut train_rng)? * batch.len() as f64;
        }
        let test_error = evaluate(&net, &test_grids, &test_labels)?.error_rate();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test_error,
            wall_seconds: if cfg.log_wall_seconds {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        writeln!(metrics, "{}", record.csv_row())?;
        metrics.flush()?;
        if test_error < best {
            best = test_error;
            save_checkpoint(&net, &best_path)?;
        }
        progress(&record);
        records.push(record);
    }
    save_checkpoint(&net, &cfg.checkpoint)?;
    Ok(TrainOutcome { net, records })
}

/// Loads a checkpoint and scores it on one split of the configured dataset.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<Evaluation> {
    let net: DeepCNet<f32> = load_checkpoint(checkpoint)?;
    let ds = load_split(cfg, split)?;
    let side = cfg.side();
    let channels = cfg.network.input_channels;
    let nc = net.config();
    if (nc.input_side(), nc.input_channels) != (side, channels) {
        return Err(Error::Shape {
            expected: format!(
                "{}x{}x{} input (checkpoint)",
                nc.input_side(),
                nc.input_side(),
                nc.input_channels
            ),
            actual: format!("{side}x{side}x{channels} input (dataset)"),
        });
    }
    check_classes(nc.classes, &ds, &cfg.dataset)?;
    let set = Encoder::new(cfg, ds)?;
    evaluate(&net, &set.all_grids()?, &set.labels())
}

/// Parses a metrics file back into records.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let name = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format {
            source_name: name,
            message: "missing metrics header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = (f.len() == 4)
                .then(|| {
                    Some(EpochRecord {
                        epoch: f[0].parse().ok()?,
                        train_loss: f[1].parse().ok()?,
                        test_error: f[2].parse().ok()?,
                        wall_seconds: f[3].parse().ok()?,
                    })
                })
                .flatten();
            parsed.ok_or_else(|| Error::Format {
                source_name: name.clone(),
                message: format!("line {}: malformed row", i + 2),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RasterSettings;
    use sigcnn::network::DeepCNetConfig;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut lines = String::new();
        for i in 0..12 {
            let label = i % 2;
            let stroke = if label == 0 {
                "[[0,0],[4,0],[8,0]]".to_string()
            } else {
                format!("[[0,0],[0,{}],[0,8]]", 4 + i % 3)
            };
            lines.push_str(&format!("{{\"label\":{label},\"strokes\":[{stroke}]}}\n"));
        }
        fs::write(dir.join("s.jsonl"), lines).unwrap();
        RunConfig {
            dataset: DatasetSpec::StrokesJsonl {
                train: dir.join("s.jsonl"),
                test: dir.join("s.jsonl"),
            },
            train_limit: None,
            test_limit: None,
            network: DeepCNetConfig::new(2, 4, 3, 2),
            raster: Some(RasterSettings {
                scale: 6,
                level: 1,
                delta: None,
                sample_step: 1.0,
            }),
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.02,
            momentum: 0.9,
            lr_decay: 0.9,
            augmentation: Augmentation::Translate,
            translate_shift: 1,
            seed: 5,
            checkpoint: dir.join("out/run.sdcn"),
            metrics: dir.join("out/run.csv"),
            log_wall_seconds: false,
        }
    }

    #[test]
    fn train_writes_metrics_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let mut seen = 0;
        let out = train(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        let rows = read_metrics(&cfg.metrics).unwrap();
        let rendered: Vec<String> = out.records.iter().map(EpochRecord::csv_row).collect();
        assert_eq!(rows.iter().map(EpochRecord::csv_row).collect::<Vec<_>>(), rendered);
        assert!(rows.iter().all(|r| r.wall_seconds == 0.0));
        assert!(best_checkpoint_path(&cfg.checkpoint).exists());
        let eval = evaluate_checkpoint(&cfg, &cfg.checkpoint, Split::Test).unwrap();
        assert_eq!(
            format!("{:.6}", eval.error_rate()),
            format!("{:.6}", out.final_test_error().unwrap())
        );
    }

    #[test]
    fn reruns_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        train(&cfg, |_| {}).unwrap();
        let first = fs::read(&cfg.metrics).unwrap();
        train(&cfg, |_| {}).unwrap();
        assert_eq!(first, fs::read(&cfg.metrics).unwrap());
    }

    #[test]
    fn zero_epochs_still_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 0;
        let out = train(&cfg, |_| {}).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(fs::read_to_string(&cfg.metrics).unwrap(), format!("{METRICS_HEADER}\n"));
        let net: DeepCNet<f32> = load_checkpoint(&cfg.checkpoint).unwrap();
        assert_eq!(net.layers(), out.net.layers());
    }

    #[test]
    fn eval_rejects_mismatched_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 0;
        train(&cfg, |_| {}).unwrap();
        let mut other = cfg.clone();
        other.raster.as_mut().unwrap().level = 2;
        other.network.input_channels = 7;
        let err = evaluate_checkpoint(&other, &cfg.checkpoint, Split::Test)
            .unwrap_err()
            .to_string();
        assert!(err.contains("12x12x3") && err.contains("12x12x7"), "{err}");

        fs::write(
            dir.path().join("wide.jsonl"),
            "{\"label\":4,\"strokes\":[[[0,0],[1,1]]]}\n",
        )
        .unwrap();
        let mut wide = cfg.clone();
        wide.dataset = DatasetSpec::StrokesJsonl {
            train: dir.path().join("wide.jsonl"),
            test: dir.path().join("wide.jsonl"),
        };
        let err = evaluate_checkpoint(&wide, &cfg.checkpoint, Split::Test)
            .unwrap_err()
            .to_string();
        assert!(err.contains("2 classes") && err.contains("5 classes"), "{err}");
    }
}
