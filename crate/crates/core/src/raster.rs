//! Rendering characters into sparse grids of windowed signatures.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signature::{signature_dimension, windowed_signature, PiecewiseLinearPath, Point2};

/// A handwritten character: pen strokes plus an optional class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Character {
    pub strokes: Vec<PiecewiseLinearPath>,
    pub label: Option<usize>,
}

impl Character {
    pub fn new(strokes: Vec<PiecewiseLinearPath>, label: Option<usize>) -> Self {
        Character { strokes, label }
    }

    pub fn points(&self) -> impl Iterator<Item = &Point2> {
        self.strokes.iter().flat_map(|s| s.points())
    }

    /// `(min, max)` corners of the bounding box, or `None` with no points.
    pub fn bounding_box(&self) -> Option<(Point2, Point2)> {
        let mut it = self.points();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (
                Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }

    /// Applies `f` to every point of every stroke; the label is kept.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<Character> {
        let strokes = self.strokes.iter().map(|s| s.map_points(&f)).collect::<Result<_>>()?;
        Ok(Character {
            strokes,
            label: self.label,
        })
    }
}

/// Parameters of the stroke rasterizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    /// Grid side `N`.
    pub side: usize,
    /// Character scale `n`: the box the character is fitted into.
    pub scale: usize,
    /// Signature truncation level `m`.
    pub level: usize,
    /// Arc-length half-width of the signature window.
    pub delta: f64,
    /// Arc-length stride between samples.
    pub sample_step: f64,
}

impl RasterConfig {
    /// Window half-length `n / 5` and a one-pixel sample stride.
    pub fn new(side: usize, scale: usize, level: usize) -> Self {
        RasterConfig {
            side,
            scale,
            level,
            delta: scale as f64 / 5.0,
            sample_step: 1.0,
        }
    }

    pub fn channels(&self) -> usize {
        signature_dimension(self.level, 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || self.scale > self.side {
            return Err(Error::Config(format!(
                "character scale {} must be in 1..={}",
                self.scale, self.side
            )));
        }
        if self.delta.is_nan() || self.delta <= 0.0 || self.sample_step.is_nan() || self.sample_step <= 0.0 {
            return Err(Error::Config(format!(
                "delta ({}) and sample_step ({}) must be positive",
                self.delta, self.sample_step
            )));
        }
        Ok(())
    }
}

/// What the first feature channel of a grid means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    /// Windowed signatures; channel 0 is the level-0 term and always 1.
    Signature,
    /// Grayscale intensity in `(0, 1]`, one channel.
    Image,
}

/// An `N x N` grid that stores an `M`-vector only at active cells.
///
/// Locations are kept sorted in row-major order next to a flat feature list,
/// so `features[i * M..(i + 1) * M]` belongs to `locations[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureGrid {
    side: usize,
    channels: usize,
    kind: GridKind,
    locations: Vec<(usize, usize)>,
    features: Vec<f32>,
}

impl SparseFeatureGrid {
    pub fn empty(side: usize, channels: usize, kind: GridKind) -> Self {
        SparseFeatureGrid {
            side,
            channels,
            kind,
            locations: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Builds a grid from `(row, col, vector)` triples; a repeated cell keeps
    /// the last vector written to it.
    pub fn from_cells<I>(side: usize, channels: usize, kind: GridKind, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = ((usize, usize), Vec<f32>)>,
    {
        let mut map = BTreeMap::new();
        for ((r, c), v) in cells {
            if r >= side || c >= side {
                return Err(Error::Shape {
                    expected: format!("cell within {side}x{side}"),
                    actual: format!("({r}, {c})"),
                });
            }
            if v.len() != channels {
                return Err(Error::Shape {
                    expected: format!("{channels} channels"),
                    actual: format!("{} channels", v.len()),
                });
            }
            map.insert((r, c), v);
        }
        let mut grid = SparseFeatureGrid::empty(side, channels, kind);
        grid.locations.reserve(map.len());
        grid.features.reserve(map.len() * channels);
        for (loc, v) in map {
            grid.locations.push(loc);
            grid.features.extend_from_slice(&v);
        }
        Ok(grid)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn active_count(&self) -> usize {
        self.locations.len()
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&[f32]> {
        self.locations
            .binary_search(&(row, col))
            .ok()
            .map(|i| &self.features[i * self.channels..(i + 1) * self.channels])
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[f32])> {
        self.locations
            .iter()
            .copied()
            .zip(self.features.chunks_exact(self.channels.max(1)))
    }

    /// Checks the per-kind invariants on stored vectors.
    pub fn validate(&self) -> Result<()> {
        for ((r, c), v) in self.iter() {
            let ok = match self.kind {
                GridKind::Signature => v[0] == 1.0,
                GridKind::Image => v[0] > 0.0 && v[0] <= 1.0,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "cell ({r}, {c}) has first component {} for {:?} grid",
                    v[0], self.kind
                )));
            }
        }
        Ok(())
    }

    /// Moves every cell by `(drow, dcol)` into a grid of side `new_side`,
    /// dropping cells that leave it.
    pub fn shifted(&self, new_side: usize, drow: i64, dcol: i64) -> SparseFeatureGrid {
        let mut out = SparseFeatureGrid::empty(new_side, self.channels, self.kind);
        for ((r, c), v) in self.iter() {
            let (r, c) = (r as i64 + drow, c as i64 + dcol);
            if (0..new_side as i64).contains(&r) && (0..new_side as i64).contains(&c) {
                out.locations.push((r as usize, c as usize));
                out.features.extend_from_slice(v);
            }
        }
        out
    }

    /// Re-centers the content into a grid of side `new_side`.
    pub fn recentered(&self, new_side: usize) -> SparseFeatureGrid {
        let d = (new_side as i64 - self.side as i64) / 2;
        self.shifted(new_side, d, d)
    }

    pub fn to_dense(&self) -> DenseGrid {
        let mut dense = DenseGrid::zeros(self.side, self.channels);
        for ((r, c), v) in self.iter() {
            dense.cell_mut(r, c).copy_from_slice(v);
        }
        dense
    }

    /// Inverse of `to_dense`: every cell with a non-zero vector becomes active.
    pub fn from_dense(dense: &DenseGrid, kind: GridKind) -> SparseFeatureGrid {
        let mut out = SparseFeatureGrid::empty(dense.side, dense.channels, kind);
        for r in 0..dense.side {
            for c in 0..dense.side {
                let v = dense.cell(r, c);
                if v.iter().any(|&x| x != 0.0) {
                    out.locations.push((r, c));
                    out.features.extend_from_slice(v);
                }
            }
        }
        out
    }
}

/// A dense `N x N x M` array, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl DenseGrid {
    pub fn zeros(side: usize, channels: usize) -> Self {
        DenseGrid {
            side,
            channels,
            data: vec![0.0; side * side * channels],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.side + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.side + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Fits the character into the `scale x scale` box centered in an
/// `side x side` grid, preserving aspect ratio.
pub fn normalize_character(ch: &Character, scale: usize, side: usize) -> Result<Character> {
    let (lo, hi) = ch.bounding_box().ok_or(Error::EmptyCharacter)?;
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    let factor = if extent > 0.0 { scale as f64 / extent } else { 1.0 };
    let mid = Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let center = side as f64 / 2.0;
    ch.map_points(|p| Point2::new(center + (p.x - mid.x) * factor, center + (p.y - mid.y) * factor))
}

/// Nearest cell index for coordinate `v`. Exact halves round away from the
/// grid center; the result is clamped into the grid.
pub fn round_to_cell(v: f64, side: usize) -> usize {
    let floor = v.floor();
    let frac = v - floor;
    let center = side as f64 / 2.0;
    let rounded = if frac > 0.5 || (frac == 0.5 && v >= center) {
        floor + 1.0
    } else {
        floor
    };
    rounded.clamp(0.0, side as f64 - 1.0) as usize
}

/// Arc-length sample positions `0, step, 2 step, ...`, ending exactly at `length`.
fn sample_positions(length: f64, step: f64) -> impl Iterator<Item = f64> {
    let full = (length / step).floor() as usize;
    let ends_on_step = full as f64 * step >= length;
    (0..=full)
        .map(move |i| (i as f64 * step).min(length))
        .chain((!ends_on_step).then_some(length))
}

/// Renders the character into a signature grid. Strokes are walked at unit
/// speed; at every sample the windowed signature is written into the cell
/// under the pen, later samples overwriting earlier ones.
pub fn rasterize(ch: &Character, cfg: &RasterConfig) -> Result<SparseFeatureGrid> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for stroke in &ch.strokes {
        for t in sample_positions(stroke.length(), cfg.sample_step) {
            let sig = windowed_signature(stroke, t, cfg.delta, cfg.level)?;
            let p = stroke.locate(t)?;
            let cell = (round_to_cell(p.y, cfg.side), round_to_cell(p.x, cfg.side));
            cells.push((cell, sig.to_f32()));
        }
    }
    SparseFeatureGrid::from_cells(cfg.side, cfg.channels(), GridKind::Signature, cells)
}

/// Rigid integer translation by `(dx, dy)`.
pub fn translate(ch: &Character, dx: i64, dy: i64) -> Result<Character> {
    ch.map_points(|p| Point2::new(p.x + dx as f64, p.y + dy as f64))
}

/// Translates by an integer offset drawn uniformly from `[-max_shift, max_shift]^2`.
pub fn augment_translate<R: Rng + ?Sized>(ch: &Character, max_shift: i64, rng: &mut R) -> Result<Character> {
    let dx = rng.gen_range(-max_shift..=max_shift);
    let dy = rng.gen_range(-max_shift..=max_shift);
    translate(ch, dx, dy)
}

/// Ranges for random affine augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineAugment {
    pub max_rotation: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_shift: i64,
}

impl Default for AffineAugment {
    fn default() -> Self {
        AffineAugment {
            max_rotation: 0.13,
            min_scale: 0.85,
            max_scale: 1.15,
            max_shift: 2,
        }
    }
}

impl AffineAugment {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineParams {
        AffineParams {
            rotation: rng.gen_range(-self.max_rotation..=self.max_rotation),
            scale_x: rng.gen_range(self.min_scale..=self.max_scale),
            scale_y: rng.gen_range(self.min_scale..=self.max_scale),
            shift: (
                rng.gen_range(-self.max_shift..=self.max_shift),
                rng.gen_range(-self.max_shift..=self.max_shift),
            ),
        }
    }
}

/// One draw of the affine augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    pub shift: (i64, i64),
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
        shift: (0, 0),
    };

    /// Scales along the axes, rotates about `center`, then translates.
    pub fn apply(&self, ch: &Character, center: Point2) -> Result<Character> {
        let (sin, cos) = self.rotation.sin_cos();
        let (dx, dy) = (self.shift.0 as f64, self.shift.1 as f64);
        ch.map_points(|p| {
            let x = (p.x - center.x) * self.scale_x;
            let y = (p.y - center.y) * self.scale_y;
            Point2::new(center.x + cos * x - sin * y + dx, center.y + sin * x + cos * y + dy)
        })
    }
}

/// Random scaling, rotation and translation about the center of an
/// `side x side` grid, with the default ranges.
pub fn augment_affine<R: Rng + ?Sized>(ch: &Character, side: usize, rng: &mut R) -> Result<Character> {
    let c = side as f64 / 2.0;
    AffineAugment::default().sample(rng).apply(ch, Point2::new(c, c))
}
