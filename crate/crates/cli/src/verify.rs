//! Self-check suites run by `sigcnn verify`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigcnn::network::{check_gradients, DeepCNet, DeepCNetConfig, DenseTensor, Mode};
use sigcnn::raster::{GridKind, SparseFeatureGrid};
use sigcnn::signature::{
    chen_concat, path_signature, segment_signature, signature_dimension, Displacement2, PiecewiseLinearPath, Point2,
    TruncatedSignature,
};
use sigcnn::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Signatures,
    SparseDense,
    Gradients,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Suite, String> {
        match s {
            "signatures" => Ok(Suite::Signatures),
            "sparse-dense" => Ok(Suite::SparseDense),
            "gradients" => Ok(Suite::Gradients),
            "all" => Ok(Suite::All),
            _ => Err(format!(
                "unknown suite {s:?}; expected signatures, sparse-dense, gradients or all"
            )),
        }
    }
}

/// Outcome of one property: the worst error seen against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub worst: f64,
    pub bound: f64,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.bound
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} (worst {:.3e}, bound {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.bound
        )
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if matches!(suite, Suite::Signatures | Suite::All) {
        out.extend(signature_properties(&mut rng)?);
    }
    if matches!(suite, Suite::SparseDense | Suite::All) {
        out.push(sparse_dense(&mut rng, 100)?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        out.push(gradients(&mut rng)?);
    }
    Ok(out)
}

/// Largest componentwise difference relative to the larger magnitude (at least 1).
fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn random_path<R: Rng>(rng: &mut R, points: usize) -> PiecewiseLinearPath {
    let pts: Vec<Point2> = (0..points)
        .map(|_| Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
        .collect();
    PiecewiseLinearPath::new(pts).expect("finite points")
}

fn random_signature<R: Rng>(rng: &mut R, m: usize) -> TruncatedSignature {
    let n = rng.gen_range(2..6);
    path_signature(&random_path(rng, n), m)
}

fn signature_properties<R: Rng>(rng: &mut R) -> Result<Vec<PropertyResult>> {
    let a = segment_signature(Displacement2::new(1.0, 1.0), 2);
    let b = segment_signature(Displacement2::new(1.0, -1.0), 2);
    let joined = chen_concat(&a, &b)?;
    let fig = relative_difference(joined.coeffs(), &[1.0, 2.0, 0.0, 2.0, -1.0, 1.0, 0.0]);

    let mut assoc = 0.0f64;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=4);
        let (x, y, z) = (
            random_signature(rng, m),
            random_signature(rng, m),
            random_signature(rng, m),
        );
        let left = chen_concat(&chen_concat(&x, &y)?, &z)?;
        let right = chen_concat(&x, &chen_concat(&y, &z)?)?;
        assoc = assoc.max(relative_difference(left.coeffs(), right.coeffs()));
    }

    let mut scaling = 0.0f64;
    for _ in 0..200 {
        let path = random_path(rng, 5);
        let lambda: f64 = rng.gen_range(-3.0..3.0);
        let scaled = path.map_points(|p| Point2::new(lambda * p.x, lambda * p.y))?;
        let (s, t) = (path_signature(&path, 3), path_signature(&scaled, 3));
        for k in 1..=3 {
            let expected: Vec<f64> = s.level(k).iter().map(|v| v * lambda.powi(k as i32)).collect();
            scaling = scaling.max(relative_difference(t.level(k), &expected));
        }
    }

    let mut subdivision = 0.0f64;
    for _ in 0..200 {
        let path = random_path(rng, 4);
        let mut refined = vec![path.points()[0]];
        for w in path.points().windows(2) {
            let mut cuts: Vec<f64> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0.0..1.0)).collect();
            cuts.sort_by(f64::total_cmp);
            refined.extend(cuts.iter().map(|&s| w[0].lerp(&w[1], s)));
            refined.push(w[1]);
        }
        let fine = PiecewiseLinearPath::new(refined)?;
        let m = 4;
        subdivision = subdivision.max(relative_difference(
            path_signature(&path, m).coeffs(),
            path_signature(&fine, m).coeffs(),
        ));
    }

    let path = random_path(rng, 6);
    let pieces = 2000;
    let mut acc = TruncatedSignature::identity(4);
    for w in path.points().windows(2) {
        let step = Displacement2::new((w[1].x - w[0].x) / pieces as f64, (w[1].y - w[0].y) / pieces as f64);
        for _ in 0..pieces {
            acc = chen_concat(&acc, &segment_signature(step, 4))?;
        }
    }
    let fine_oracle = relative_difference(acc.coeffs(), path_signature(&path, 4).coeffs());

    let dims = (0..=5)
        .filter(|&m| signature_dimension(m, 2) != (1 << (m + 1)) - 1)
        .count() as f64;

    Ok(vec![
        PropertyResult {
            name: "two-segment concatenation worked example",
            worst: fig,
            bound: 0.0,
        },
        PropertyResult {
            name: "chen associativity (1000 triples)",
            worst: assoc,
            bound: 1e-12,
        },
        PropertyResult {
            name: "level-k scaling by lambda^k",
            worst: scaling,
            bound: 1e-12,
        },
        PropertyResult {
            name: "subdivision invariance",
            worst: subdivision,
            bound: 1e-12,
        },
        PropertyResult {
            name: "fine-subdivision agreement (10^4 pieces)",
            worst: fine_oracle,
            bound: 1e-9,
        },
        PropertyResult {
            name: "dimension formula m = 0..5",
            worst: dims,
            bound: 0.0,
        },
    ])
}

/// Random weights plus random biases, so the ground state is not trivial.
pub fn random_net<R: Rng>(config: DeepCNetConfig, rng: &mut R) -> Result<DeepCNet<f32>> {
    let mut net = DeepCNet::new(config, rng)?;
    net.update_layers(|layers| {
        for layer in layers {
            for b in &mut layer.biases {
                *b = rng.gen_range(-0.3..0.3);
            }
        }
    });
    Ok(net)
}

/// Signature-like input with `active` random cells (channel 0 fixed to 1).
pub fn random_grid<R: Rng>(side: usize, channels: usize, active: usize, rng: &mut R) -> SparseFeatureGrid {
    let cells: Vec<_> = (0..active)
        .map(|_| {
            let mut v = vec![1.0f32];
            v.extend((1..channels).map(|_| rng.gen_range(-1.0f32..1.0)));
            ((rng.gen_range(0..side), rng.gen_range(0..side)), v)
        })
        .collect();
    SparseFeatureGrid::from_cells(side, channels, GridKind::Signature, cells).expect("cells in range")
}

fn sparse_dense<R: Rng>(rng: &mut R, trials: usize) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let channels = [1, 3, 7][rng.gen_range(0..3)];
        let net = random_net(DeepCNetConfig::new(3, 5, channels, 10), rng)?;
        let active = rng.gen_range(5..=50);
        let grid = random_grid(24, channels, active, rng);
        let mut none = rand::rngs::mock::StepRng::new(0, 0);
        let sparse: Vec<f64> = net
            .forward_sparse(&grid, Mode::Eval, &mut none)?
            .into_iter()
            .map(f64::from)
            .collect();
        let dense = net
            .cast::<f64>()
            .forward_dense(&DenseTensor::from_grid(&grid.to_dense()))?;
        let scale = dense.iter().fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
        let diff = sparse.iter().zip(&dense).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(PropertyResult {
        name: "sparse forward equals dense forward (100 nets)",
        worst,
        bound: 1e-5,
    })
}

fn gradients<R: Rng>(rng: &mut R) -> Result<PropertyResult> {
    let net = random_net(DeepCNetConfig::new(2, 3, 3, 3), rng)?.cast::<f64>();
    let grids: Vec<SparseFeatureGrid> = (0..3).map(|_| random_grid(12, 3, 8, rng)).collect();
    let batch = [(&grids[0], 0), (&grids[1], 1), (&grids[2], 2)];
    let report = check_gradients(&net, &batch, 1e-4)?;
    Ok(PropertyResult {
        name: "finite-difference gradients, DeepCNet(2,3)",
        worst: report.worst_relative_error(),
        bound: 1e-4,
    })
}
