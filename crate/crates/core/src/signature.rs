//! Truncated signatures of piecewise-linear planar paths.
//!
//! A signature truncated at level `m` is stored as one flat vector holding
//! levels `0..=m` back to back. Level `k` occupies `2^k` entries starting at
//! offset `2^k - 1`, in row-major Kronecker order, so the tensor product of a
//! level-`i` block with a level-`j` block is `out[p * 2^j + q] = a[p] * b[q]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the writing surface, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn lerp(&self, other: &Point2, s: f64) -> Point2 {
        Point2::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }

    /// Displacement from `self` to `other`.
    pub fn to(&self, other: &Point2) -> Displacement2 {
        Displacement2::new(other.x - self.x, other.y - self.y)
    }
}

/// A path increment `X_t - X_s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement2 {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement2 {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Displacement2 { dx, dy }
    }

    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0
    }
}

/// Number of coefficients in a signature of a `d`-dimensional path truncated
/// at level `m`: `1 + d + d^2 + ... + d^m`.
pub fn signature_dimension(m: usize, d: usize) -> usize {
    let mut total = 0;
    let mut power = 1;
    for _ in 0..=m {
        total += power;
        power *= d;
    }
    total
}

#[inline]
fn level_offset(k: usize) -> usize {
    (1 << k) - 1
}

/// Levels `0..=m` of the iterated integrals of a planar path.
#[derive(Clone, PartialEq)]
pub struct TruncatedSignature {
    m: usize,
    coeffs: Vec<f64>,
}

impl TruncatedSignature {
    /// The signature of a constant path: `(1, 0, 0, ...)`.
    pub fn identity(m: usize) -> Self {
        let mut coeffs = vec![0.0; signature_dimension(m, 2)];
        coeffs[0] = 1.0;
        TruncatedSignature { m, coeffs }
    }

    /// Builds a signature from a flat coefficient vector. The level-0 entry must be 1.
    pub fn from_coeffs(m: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = signature_dimension(m, 2);
        if coeffs.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} coefficients for level {m}"),
                actual: format!("{} coefficients", coeffs.len()),
            });
        }
        if coeffs[0] != 1.0 {
            return Err(Error::Config(format!(
                "level-0 coefficient must be 1, got {}",
                coeffs[0]
            )));
        }
        Ok(TruncatedSignature { m, coeffs })
    }

    pub fn truncation_level(&self) -> usize {
        self.m
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// The `2^k` entries of level `k`.
    pub fn level(&self, k: usize) -> &[f64] {
        assert!(k <= self.m, "level {k} exceeds truncation level {}", self.m);
        let start = level_offset(k);
        &self.coeffs[start..start + (1 << k)]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.coeffs.iter().map(|&c| c as f32).collect()
    }
}

impl fmt::Debug for TruncatedSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for k in 0..=self.m {
            list.entry(&self.level(k));
        }
        list.finish()
    }
}

/// Exact signature of the straight line with increment `delta`: level `k` is
/// the `k`-fold Kronecker power of `(dx, dy)` divided by `k!`.
pub fn segment_signature(delta: Displacement2, m: usize) -> TruncatedSignature {
    let mut sig = TruncatedSignature::identity(m);
    let d = [delta.dx, delta.dy];
    for k in 1..=m {
        let (prev, cur) = sig.coeffs.split_at_mut(level_offset(k));
        let prev = &prev[level_offset(k - 1)..];
        let inv_k = 1.0 / k as f64;
        for (p, &a) in prev.iter().enumerate() {
            cur[2 * p] = a * d[0] * inv_k;
            cur[2 * p + 1] = a * d[1] * inv_k;
        }
    }
    sig
}

/// Signature of the concatenation of a path with signature `a` followed by a
/// path with signature `b` (Chen's identity).
pub fn chen_concat(a: &TruncatedSignature, b: &TruncatedSignature) -> Result<TruncatedSignature> {
    if a.m != b.m {
        return Err(Error::IncompatibleLevels { left: a.m, right: b.m });
    }
    let m = a.m;
    let mut out = vec![0.0; a.coeffs.len()];
    out[0] = 1.0;
    for k in 1..=m {
        let dst = &mut out[level_offset(k)..level_offset(k + 1)];
        for i in 0..=k {
            let j = k - i;
            let left = a.level(i);
            let right = b.level(j);
            let width = right.len();
            for (p, &x) in left.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut dst[p * width..(p + 1) * width];
                for (slot, &y) in row.iter_mut().zip(right) {
                    *slot += x * y;
                }
            }
        }
    }
    Ok(TruncatedSignature { m, coeffs: out })
}

/// A pen stroke: an ordered list of points joined by straight segments,
/// parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    points: Vec<Point2>,
    cumulative_length: Vec<f64>,
}

impl PiecewiseLinearPath {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidPath("a path needs at least one point".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidPath(format!("non-finite point {p:?}")));
        }
        let mut cumulative_length = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative_length.push(acc);
        for w in points.windows(2) {
            acc += w[0].distance(&w[1]);
            cumulative_length.push(acc);
        }
        if !acc.is_finite() {
            return Err(Error::InvalidPath("path length overflows".into()));
        }
        Ok(PiecewiseLinearPath {
            points,
            cumulative_length,
        })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn cumulative_length(&self) -> &[f64] {
        &self.cumulative_length
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_length.last().unwrap()
    }

    /// Applies `f` to every point, recomputing arc lengths.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<Self> {
        Self::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Index of the segment containing arc length `t`. A `t` that lands exactly
    /// on a vertex belongs to the segment starting there; `t == length` maps to
    /// the last point.
    fn segment_at(&self, t: f64) -> usize {
        self.cumulative_length.partition_point(|&c| c <= t).saturating_sub(1)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let length = self.length();
        if !(0.0..=length).contains(&t) {
            return Err(Error::OutOfRange { t, length });
        }
        Ok(())
    }

    /// Point at arc length `t`.
    pub fn locate(&self, t: f64) -> Result<Point2> {
        self.check_range(t)?;
        Ok(self.interpolate(t))
    }

    fn interpolate(&self, t: f64) -> Point2 {
        let i = self.segment_at(t);
        if i + 1 >= self.points.len() {
            return *self.points.last().unwrap();
        }
        let seg = self.cumulative_length[i + 1] - self.cumulative_length[i];
        let s = (t - self.cumulative_length[i]) / seg;
        self.points[i].lerp(&self.points[i + 1], s)
    }

    /// Vertices of the sub-path between arc lengths `a <= b`, with interpolated
    /// endpoints.
    pub fn sub_path_points(&self, a: f64, b: f64) -> Result<Vec<Point2>> {
        self.check_range(a)?;
        self.check_range(b)?;
        let mut pts = vec![self.interpolate(a)];
        let first = self.segment_at(a) + 1;
        for i in first..self.points.len() {
            if self.cumulative_length[i] >= b {
                break;
            }
            pts.push(self.points[i]);
        }
        pts.push(self.interpolate(b));
        Ok(pts)
    }
}

fn fold_points(points: &[Point2], m: usize) -> TruncatedSignature {
    let mut sig = TruncatedSignature::identity(m);
    for w in points.windows(2) {
        let d = w[0].to(&w[1]);
        if d.is_zero() {
            continue;
        }
        sig = chen_concat(&sig, &segment_signature(d, m)).expect("same truncation level");
    }
    sig
}

/// Signature of the whole path: Chen product of its segment signatures.
pub fn path_signature(path: &PiecewiseLinearPath, m: usize) -> TruncatedSignature {
    fold_points(&path.points, m)
}

/// Signature of the sub-path over arc lengths `[t - delta, t + delta]`,
/// clipped to the extent of the path.
pub fn windowed_signature(path: &PiecewiseLinearPath, t: f64, delta: f64, m: usize) -> Result<TruncatedSignature> {
    path.check_range(t)?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Config(format!(
            "window half-length must be positive, got {delta}"
        )));
    }
    let a = (t - delta).max(0.0);
    let b = (t + delta).min(path.length());
    let pts = path.sub_path_points(a, b)?;
    Ok(fold_points(&pts, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(coords: &[(f64, f64)]) -> PiecewiseLinearPath {
        PiecewiseLinearPath::from_xy(coords).unwrap()
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(signature_dimension(2, 2), 7);
        assert_eq!(signature_dimension(0, 2), 1);
        assert_eq!(signature_dimension(3, 2), 15);
        assert_eq!(signature_dimension(2, 3), 13);
    }

    #[test]
    fn segment_examples() {
        let s = segment_signature(Displacement2::new(1.0, 1.0), 2);
        assert_eq!(s.coeffs(), &[1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
        let s = segment_signature(Displacement2::new(1.0, -1.0), 2);
        assert_eq!(s.coeffs(), &[1.0, 1.0, -1.0, 0.5, -0.5, -0.5, 0.5]);
        let s = segment_signature(Displacement2::default(), 3);
        assert_eq!(s, TruncatedSignature::identity(3));
    }

    #[test]
    fn level_three_divides_by_factorial() {
        let s = segment_signature(Displacement2::new(2.0, 0.0), 3);
        assert_eq!(s.level(3), &[8.0 / 6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn chen_worked_example() {
        let a = segment_signature(Displacement2::new(1.0, 1.0), 2);
        let b = segment_signature(Displacement2::new(1.0, -1.0), 2);
        let c = chen_concat(&a, &b).unwrap();
        assert_eq!(c.level(1), &[2.0, 0.0]);
        assert_eq!(c.level(2), &[2.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn chen_identity_is_neutral() {
        let s = segment_signature(Displacement2::new(0.3, -1.7), 3);
        let id = segment_signature(Displacement2::default(), 3);
        assert_eq!(chen_concat(&s, &id).unwrap(), s);
        assert_eq!(chen_concat(&id, &s).unwrap(), s);
    }

    #[test]
    fn chen_rejects_mismatched_levels() {
        let a = TruncatedSignature::identity(2);
        let b = TruncatedSignature::identity(3);
        assert!(matches!(
            chen_concat(&a, &b),
            Err(Error::IncompatibleLevels { left: 2, right: 3 })
        ));
    }

    #[test]
    fn path_examples() {
        let s = path_signature(&path(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]), 2);
        assert_eq!(s.coeffs(), &[1.0, 1.0, 1.0, 0.5, 1.0, 0.0, 0.5]);

        let s = path_signature(&path(&[(0.0, 0.0), (5.0, 5.0)]), 2);
        assert_eq!(s, segment_signature(Displacement2::new(5.0, 5.0), 2));

        let s = path_signature(&path(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]), 3);
        let t = segment_signature(Displacement2::new(2.0, 2.0), 3);
        for (x, y) in s.coeffs().iter().zip(t.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }

        let s = path_signature(&path(&[(3.0, 4.0)]), 2);
        assert_eq!(s, TruncatedSignature::identity(2));
    }

    #[test]
    fn repeated_points_are_skipped() {
        let a = path_signature(&path(&[(0.0, 0.0), (1.0, 2.0), (1.0, 2.0), (3.0, 0.0)]), 3);
        let b = path_signature(&path(&[(0.0, 0.0), (1.0, 2.0), (3.0, 0.0)]), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn locate_examples() {
        let p = path(&[(0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(p.locate(4.0).unwrap(), Point2::new(4.0, 0.0));
        assert_eq!(p.locate(0.0).unwrap(), Point2::new(0.0, 0.0));
        let p = path(&[(0.0, 0.0), (3.0, 4.0)]);
        assert_eq!(p.locate(5.0).unwrap(), Point2::new(3.0, 4.0));
        assert!(matches!(p.locate(5.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(p.locate(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn locate_on_vertex_uses_following_segment() {
        let p = path(&[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (1.0, 1.0)]);
        assert_eq!(p.segment_at(1.0), 2);
        assert_eq!(p.locate(1.0).unwrap(), Point2::new(1.0, 0.0));
        assert_eq!(p.locate(1.5).unwrap(), Point2::new(1.0, 0.5));
    }

    #[test]
    fn windowed_examples() {
        let p = path(&[(0.0, 0.0), (10.0, 0.0)]);
        let s = windowed_signature(&p, 5.0, 2.0, 2).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 4.0, 0.0, 8.0, 0.0, 0.0, 0.0]);
        let s = windowed_signature(&p, 0.0, 2.0, 2).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0]);

        let l = path(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)]);
        let s = windowed_signature(&l, 4.0, 2.0, 1).unwrap();
        let oracle = path_signature(&path(&[(2.0, 0.0), (4.0, 0.0), (4.0, 2.0)]), 1);
        assert_eq!(s, oracle);
        assert_eq!(s.coeffs(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn windowed_rejects_bad_arguments() {
        let p = path(&[(0.0, 0.0), (10.0, 0.0)]);
        assert!(windowed_signature(&p, 11.0, 2.0, 2).is_err());
        assert!(windowed_signature(&p, 1.0, 0.0, 2).is_err());
    }

    #[test]
    fn path_rejects_invalid_points() {
        assert!(PiecewiseLinearPath::new(vec![]).is_err());
        assert!(PiecewiseLinearPath::from_xy(&[(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn from_coeffs_validates() {
        assert!(TruncatedSignature::from_coeffs(1, vec![1.0, 2.0, 3.0]).is_ok());
        assert!(TruncatedSignature::from_coeffs(1, vec![1.0, 2.0]).is_err());
        assert!(TruncatedSignature::from_coeffs(1, vec![0.5, 2.0, 3.0]).is_err());
    }
}
