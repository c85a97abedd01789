//! Dataset loaders and minibatch iteration.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Character, GridKind, SparseFeatureGrid};
use crate::signature::PiecewiseLinearPath;

/// Side of the frame MNIST digits are placed in by default (`3 * 2^5`).
pub const MNIST_FRAME: usize = 96;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// A grayscale image with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub label: usize,
}

impl LabeledImage {
    pub fn nonzero_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    /// Places the image centered in a `side x side` grid, moved by
    /// `(drow, dcol)`. Non-zero pixels become active cells holding their
    /// intensity scaled to `(0, 1]`; pixels falling outside are cropped.
    pub fn to_grid(&self, side: usize, drow: i64, dcol: i64) -> SparseFeatureGrid {
        let top = (side as i64 - self.rows as i64).div_euclid(2) + drow;
        let left = (side as i64 - self.cols as i64).div_euclid(2) + dcol;
        let cells = self.pixels.iter().enumerate().filter_map(|(i, &p)| {
            let r = top + (i / self.cols) as i64;
            let c = left + (i % self.cols) as i64;
            let inside = (0..side as i64).contains(&r) && (0..side as i64).contains(&c);
            (p != 0 && inside).then(|| ((r as usize, c as usize), vec![p as f32 / 255.0]))
        });
        SparseFeatureGrid::from_cells(side, 1, GridKind::Image, cells).expect("cells are in range")
    }
}

/// Loaded samples: pen-stroke characters or grayscale images.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Strokes(Vec<Character>),
    Images(Vec<LabeledImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Strokes(v) => v.len(),
            Samples::Images(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> usize {
        match &self.samples {
            Samples::Strokes(v) => v[i].label.expect("loaded characters carry labels"),
            Samples::Images(v) => v[i].label,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let samples = match &self.samples {
            Samples::Strokes(v) => Samples::Strokes(v.iter().take(n).cloned().collect()),
            Samples::Images(v) => Samples::Images(v.iter().take(n).cloned().collect()),
        };
        Dataset {
            samples,
            class_count: self.class_count,
        }
    }

    /// Mean number of non-zero pixels per image; `None` for stroke data.
    pub fn mean_active_pixels(&self) -> Option<f64> {
        match &self.samples {
            Samples::Images(v) if !v.is_empty() => {
                Some(v.iter().map(|im| im.nonzero_pixels()).sum::<usize>() as f64 / v.len() as f64)
            }
            _ => None,
        }
    }

    /// Image `i` centered in the default 96x96 frame.
    pub fn image_grid(&self, i: usize) -> Option<SparseFeatureGrid> {
        match &self.samples {
            Samples::Images(v) => Some(v[i].to_grid(MNIST_FRAME, 0, 0)),
            Samples::Strokes(_) => None,
        }
    }

    pub fn minibatches(&self, batch_size: usize, shuffle_seed: u64) -> Minibatches {
        minibatches(self.len(), batch_size, shuffle_seed)
    }
}

fn read_u32(bytes: &[u8], at: usize, name: &str, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(name, format!("truncated before {field}")))
}

fn parse_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, name, "magic")?;
    if magic != IDX_IMAGES {
        return Err(Error::format(
            name,
            format!("magic is {magic:#010x}, expected {IDX_IMAGES:#010x} (2051)"),
        ));
    }
    let count = read_u32(bytes, 4, name, "image count")? as usize;
    let rows = read_u32(bytes, 8, name, "row count")? as usize;
    let cols = read_u32(bytes, 12, name, "column count")? as usize;
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(Error::format(
            name,
            format!(
                "pixel data has {} bytes, header implies {count} x {rows} x {cols} = {}",
                body.len(),
                count * rows * cols
            ),
        ));
    }
    Ok((count, rows, cols, body.to_vec()))
}

fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, name, "magic")?;
    if magic != IDX_LABELS {
        return Err(Error::format(
            name,
            format!("magic is {magic:#010x}, expected {IDX_LABELS:#010x} (2049)"),
        ));
    }
    let count = read_u32(bytes, 4, name, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            name,
            format!("label data has {} bytes, header says {count}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Parses an MNIST image/label pair of IDX files (uncompressed).
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (iname, lname) = (ip.display().to_string(), lp.display().to_string());
    let (count, rows, cols, pixels) = parse_idx_images(&fs::read(ip)?, &iname)?;
    let labels = parse_idx_labels(&fs::read(lp)?, &lname)?;
    if labels.len() != count {
        return Err(Error::format(
            lname,
            format!("label count {} does not match image count {count}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(lname, format!("label {bad} outside 0..10")));
    }
    let area = rows * cols;
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| LabeledImage {
            rows,
            cols,
            pixels: pixels[i * area..(i + 1) * area].to_vec(),
            label: l as usize,
        })
        .collect();
    Ok(Dataset {
        samples: Samples::Images(images),
        class_count: 10,
    })
}

/// Parses UCI Pendigits records: 16 coordinates in `[0, 100]` forming eight
/// `(x, y)` points, then the digit. Each record becomes a one-stroke character.
pub fn load_pendigits(path: impl AsRef<Path>) -> Result<Dataset> {
    let name = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref())?;
    let mut chars = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::format(&name, format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 17 {
            return Err(at(format!("expected 17 fields, found {}", fields.len())));
        }
        let mut values = [0u32; 17];
        for (v, f) in values.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| at(format!("field {f:?} is not an integer")))?;
        }
        if let Some(v) = values[..16].iter().find(|&&v| v > 100) {
            return Err(at(format!("coordinate {v} outside [0, 100]")));
        }
        if values[16] > 9 {
            return Err(at(format!("class {} outside 0..10", values[16])));
        }
        let points: Vec<(f64, f64)> = values[..16]
            .chunks_exact(2)
            .map(|p| (p[0] as f64, p[1] as f64))
            .collect();
        let stroke = PiecewiseLinearPath::from_xy(&points).map_err(|e| at(e.to_string()))?;
        chars.push(Character::new(vec![stroke], Some(values[16] as usize)));
    }
    if chars.is_empty() {
        return Err(Error::EmptyDataset(name));
    }
    Ok(Dataset {
        samples: Samples::Strokes(chars),
        class_count: 10,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrokeRecord {
    label: usize,
    strokes: Vec<Vec<[f64; 2]>>,
}

/// Reads the canonical JSON-lines stroke format, one
/// `{"label": int, "strokes": [[[x, y], ...], ...]}` object per line.
pub fn load_strokes_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let name = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref())?;
    let mut chars = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::format(&name, format!("line {}: {msg}", lineno + 1));
        let rec: StrokeRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let strokes = rec
            .strokes
            .iter()
            .map(|s| {
                let pts: Vec<(f64, f64)> = s.iter().map(|p| (p[0], p[1])).collect();
                PiecewiseLinearPath::from_xy(&pts)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| at(e.to_string()))?;
        chars.push(Character::new(strokes, Some(rec.label)));
    }
    let class_count = chars.iter().filter_map(|c| c.label).max().map(|m| m + 1);
    match class_count {
        Some(class_count) => Ok(Dataset {
            samples: Samples::Strokes(chars),
            class_count,
        }),
        None => Err(Error::EmptyDataset(name)),
    }
}

/// Writes characters in the canonical JSON-lines stroke format. Characters
/// without a label are written with label 0.
pub fn write_strokes_jsonl<W: Write>(chars: &[Character], mut out: W) -> Result<()> {
    for ch in chars {
        let rec = StrokeRecord {
            label: ch.label.unwrap_or(0),
            strokes: ch
                .strokes
                .iter()
                .map(|s| s.points().iter().map(|p| [p.x, p.y]).collect())
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Shuffled batches of sample indices; the last batch may be short.
#[derive(Debug, Clone)]
pub struct Minibatches {
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Minibatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.order[self.next..end].to_vec();
        self.next = end;
        Some(batch)
    }
}

/// Deterministic permutation of `0..len` for `shuffle_seed`, cut into batches.
pub fn minibatches(len: usize, batch_size: usize, shuffle_seed: u64) -> Minibatches {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Minibatches {
        order,
        batch_size,
        next: 0,
    }
}
