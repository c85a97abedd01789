//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Data-driven criteria read the
//! datasets fetched by `scripts/fetch_data.sh` (or `$SIGCNN_DATA`).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigcnn::data::load_mnist_idx;
use sigcnn::network::{check_gradients, path_count_grid, DeepCNet, DeepCNetConfig, DenseTensor, Mode};
use sigcnn::raster::{GridKind, SparseFeatureGrid};
use sigcnn::signature::{
    chen_concat, path_signature, segment_signature, signature_dimension, Displacement2, PiecewiseLinearPath, Point2,
    TruncatedSignature,
};
use sigcnn_cli::config::{preset, RunConfig};
use sigcnn_cli::train::{evaluate_checkpoint, train, Split};

type Outcome = Result<String, String>;

fn data_dir() -> PathBuf {
    std::env::var_os("SIGCNN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn random_path(rng: &mut impl Rng, n: usize) -> PiecewiseLinearPath {
    let pts: Vec<Point2> = (0..n)
        .map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
        .collect();
    PiecewiseLinearPath::new(pts).unwrap()
}

fn signature_exactness() -> Outcome {
    let a = segment_signature(Displacement2::new(1.0, 1.0), 2);
    let b = segment_signature(Displacement2::new(1.0, -1.0), 2);
    let c = chen_concat(&a, &b).map_err(|e| e.to_string())?;
    check(
        c.level(1) == [2.0, 0.0] && c.level(2) == [2.0, -1.0, 1.0, 0.0],
        format!("level 1 {:?}, level 2 {:?}", c.level(1), c.level(2)),
    )
}

fn signature_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut assoc = 0.0f64;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=4);
        let s: Vec<TruncatedSignature> = (0..3)
            .map(|_| {
                let n = rng.gen_range(2..6);
                path_signature(&random_path(&mut rng, n), m)
            })
            .collect();
        let l = chen_concat(&chen_concat(&s[0], &s[1]).unwrap(), &s[2]).unwrap();
        let r = chen_concat(&s[0], &chen_concat(&s[1], &s[2]).unwrap()).unwrap();
        assoc = assoc.max(rel(l.coeffs(), r.coeffs()));
    }
    let mut scaling = 0.0f64;
    for _ in 0..200 {
        let p = random_path(&mut rng, 5);
        let lambda: f64 = rng.gen_range(0.1..10.0);
        let q = p.map_points(|v| Point2::new(lambda * v.x, lambda * v.y)).unwrap();
        let (s, t) = (path_signature(&p, 3), path_signature(&q, 3));
        for k in 1..=3 {
            let want: Vec<f64> = s.level(k).iter().map(|v| v * lambda.powi(k as i32)).collect();
            scaling = scaling.max(rel(t.level(k), &want));
        }
    }
    let mut subdivision = 0.0f64;
    for _ in 0..200 {
        let p = random_path(&mut rng, 4);
        let mut pts = vec![p.points()[0]];
        for w in p.points().windows(2) {
            let mut cuts: Vec<f64> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0.0..1.0)).collect();
            cuts.sort_by(f64::total_cmp);
            pts.extend(cuts.iter().map(|&s| w[0].lerp(&w[1], s)));
            pts.push(w[1]);
        }
        let fine = PiecewiseLinearPath::new(pts).unwrap();
        subdivision = subdivision.max(rel(path_signature(&p, 4).coeffs(), path_signature(&fine, 4).coeffs()));
    }
    let p = random_path(&mut rng, 5);
    let pieces = 2500;
    let mut acc = TruncatedSignature::identity(4);
    for w in p.points().windows(2) {
        let d = Displacement2::new((w[1].x - w[0].x) / pieces as f64, (w[1].y - w[0].y) / pieces as f64);
        let piece = segment_signature(d, 4);
        for _ in 0..pieces {
            acc = chen_concat(&acc, &piece).unwrap();
        }
    }
    let fine_oracle = rel(acc.coeffs(), path_signature(&p, 4).coeffs());
    check(
        assoc <= 1e-12 && scaling <= 1e-12 && subdivision <= 1e-12 && fine_oracle <= 1e-9,
        format!(
            "associativity {assoc:.1e}, scaling {scaling:.1e}, subdivision {subdivision:.1e}, \
             10^4-piece oracle {fine_oracle:.1e}"
        ),
    )
}

fn dimension_formula() -> Outcome {
    let dims: Vec<usize> = (0..=5).map(|m| signature_dimension(m, 2)).collect();
    let sums: Vec<usize> = (0..=5u32).map(|m| (0..=m).map(|k| 2usize.pow(k)).sum()).collect();
    let closed: Vec<usize> = (0..=5).map(|m| (1 << (m + 1)) - 1).collect();
    check(dims == sums && dims == closed, format!("{dims:?}"))
}

fn random_net(cfg: DeepCNetConfig, rng: &mut impl Rng) -> DeepCNet<f32> {
    let mut net = DeepCNet::<f32>::new(cfg, rng).unwrap();
    net.update_layers(|layers| {
        for l in layers {
            for b in &mut l.biases {
                *b = rng.gen_range(-0.3..0.3);
            }
        }
    });
    net
}

fn random_grid(side: usize, channels: usize, active: usize, rng: &mut impl Rng) -> SparseFeatureGrid {
    let cells: Vec<_> = (0..active)
        .map(|_| {
            let mut v = vec![1.0f32];
            v.extend((1..channels).map(|_| rng.gen_range(-1.0f32..1.0)));
            ((rng.gen_range(0..side), rng.gen_range(0..side)), v)
        })
        .collect();
    SparseFeatureGrid::from_cells(side, channels, GridKind::Signature, cells).unwrap()
}

fn sparse_dense() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let net = random_net(DeepCNetConfig::new(3, 5, 7, 10), &mut rng);
        let active = rng.gen_range(5..=50);
        let grid = random_grid(24, 7, active, &mut rng);
        let sparse = net
            .forward_sparse(&grid, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))
            .map_err(|e| e.to_string())?;
        let dense = net
            .forward_dense(&DenseTensor::from_grid(&grid.to_dense()))
            .map_err(|e| e.to_string())?;
        let scale = dense.iter().fold(f32::MIN_POSITIVE, |m, v| m.max(v.abs())) as f64;
        let diff = sparse
            .iter()
            .zip(&dense)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64));
        worst = worst.max(diff / scale);
    }
    check(
        worst <= 1e-5,
        format!("worst relative difference {worst:.2e} over 100 nets"),
    )
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_net(DeepCNetConfig::new(2, 3, 3, 3), &mut rng).cast::<f64>();
    let grids: Vec<SparseFeatureGrid> = (0..3).map(|_| random_grid(12, 3, 10, &mut rng)).collect();
    let batch: Vec<(&SparseFeatureGrid, usize)> = grids.iter().zip([0, 1, 2]).collect();
    let report = check_gradients(&net, &batch, 1e-4).map_err(|e| e.to_string())?;
    let worst = report.worst_relative_error();
    check(
        worst <= 1e-4,
        format!(
            "worst tensor relative error {worst:.2e} over {} parameters",
            net.parameter_count()
        ),
    )
}

/// Brute-force path enumeration over the layer connectivity graph.
fn enumerate(stages: &[(usize, usize)], pos: (usize, usize)) -> u64 {
    let Some((&(filter, out), rest)) = stages.split_first() else {
        return 1;
    };
    let mut total = 0;
    for dr in 0..filter.min(pos.0 + 1) {
        for dc in 0..filter.min(pos.1 + 1) {
            let (r, c) = (pos.0 - dr, pos.1 - dc);
            if r < out && c < out && r / 2 < out / 2 && c / 2 < out / 2 {
                total += enumerate(rest, (r / 2, c / 2));
            }
        }
    }
    total
}

fn path_counts() -> Outcome {
    let mut notes = Vec::new();
    for l in 1..=5usize {
        let g = path_count_grid(l);
        let n = 3 << l;
        let plateau = 9 * 4u64.pow(l as u32 - 1);
        let corners = [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)]
            .iter()
            .all(|&(r, c)| g.get(r, c) == 1);
        let flat = (n / 3..2 * n / 3).all(|r| (n / 3..2 * n / 3).all(|c| g.get(r, c) == plateau));
        if !(corners && flat) {
            return Err(format!("l={l}: corners ok {corners}, plateau {plateau} ok {flat}"));
        }
        notes.push(format!("l={l}:{plateau}"));
    }
    for l in 1..=2usize {
        let mut side = 3 << l;
        let mut stages = Vec::new();
        for k in 1..=l {
            let f = if k == 1 { 3 } else { 2 };
            stages.push((f, side + 1 - f));
            side = (side + 1 - f) / 2;
        }
        let g = path_count_grid(l);
        let n = 3 << l;
        for r in 0..n {
            for c in 0..n {
                let e = enumerate(&stages, (r, c));
                if g.get(r, c) != e {
                    return Err(format!("l={l} ({r},{c}): dp {} vs enumeration {e}", g.get(r, c)));
                }
            }
        }
    }
    Ok(format!(
        "corners 1, plateaus {}, enumeration agrees for l<=2",
        notes.join(" ")
    ))
}

fn architecture() -> Outcome {
    let s = DeepCNetConfig::new(4, 100, 1, 10).architecture_string();
    check(s == "input-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-500N-output", s)
}

fn mnist_sparsity() -> Outcome {
    let dir = data_dir().join("mnist");
    let ds = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
        .map_err(|e| format!("{e} (run scripts/fetch_data.sh)"))?;
    let mean = ds.mean_active_pixels().unwrap_or(0.0);
    check(
        ds.len() == 60_000 && ds.class_count == 10 && (130.0..=170.0).contains(&mean),
        format!("{} images, mean {mean:.1} non-zero pixels", ds.len()),
    )
}

fn run_preset(name: &str, out: &std::path::Path) -> Result<(RunConfig, f64, f64), String> {
    let mut cfg = preset(name, &data_dir(), out).map_err(|e| e.to_string())?;
    cfg.log_wall_seconds = false;
    let started = Instant::now();
    let outcome = train(&cfg, |_| {}).map_err(|e| format!("{name}: {e}"))?;
    let err = outcome.final_test_error().ok_or("no epochs")?;
    Ok((cfg, err, started.elapsed().as_secs_f64()))
}

struct PendigitsRuns {
    out: tempfile::TempDir,
    m2: Option<RunConfig>,
}

fn pendigits(runs: &mut PendigitsRuns) -> Outcome {
    let (_, e0, t0) = run_preset("pendigits-m0", runs.out.path())?;
    let (cfg2, e2, t2) = run_preset("pendigits-m2", runs.out.path())?;
    let eval = evaluate_checkpoint(&cfg2, &cfg2.checkpoint, Split::Test).map_err(|e| e.to_string())?;
    let reproduced = format!("{:.6}", eval.error_rate()) == format!("{e2:.6}");
    let epochs = cfg2.epochs;
    runs.m2 = Some(cfg2);
    check(
        e2 <= 0.05 && e2 < e0 && reproduced && epochs <= 100,
        format!(
            "{epochs} epochs: m=2 {:.2}% ({t2:.0}s), m=0 {:.2}% ({t0:.0}s), eval reproduces {reproduced}",
            100.0 * e2,
            100.0 * e0
        ),
    )
}

fn mnist_subset() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cfg, err, secs) = run_preset("mnist-small", out.path())?;
    check(
        err <= 0.035 && cfg.epochs <= 20 && cfg.train_limit == Some(10_000),
        format!(
            "DeepCNet(3,10), {} training images, {} epochs: {:.2}% test error ({secs:.0}s)",
            cfg.train_limit.unwrap_or(0),
            cfg.epochs,
            100.0 * err
        ),
    )
}

fn determinism(runs: &PendigitsRuns) -> Outcome {
    let first_cfg = runs.m2.as_ref().ok_or("criterion 9 run unavailable")?;
    let first = fs::read(&first_cfg.metrics).map_err(|e| e.to_string())?;
    let mut cfg = first_cfg.clone();
    cfg.metrics = runs.out.path().join("repeat.csv");
    cfg.checkpoint = runs.out.path().join("repeat.sdcn");
    train(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let second = fs::read(&cfg.metrics).map_err(|e| e.to_string())?;
    check(
        first == second && !first.is_empty(),
        format!("{} bytes, identical {}", first.len(), first == second),
    )
}

fn report(name: &str, outcome: Outcome) -> bool {
    match &outcome {
        Ok(detail) => println!("PASS criterion {name}: {detail}"),
        Err(detail) => println!("FAIL criterion {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let mut runs = PendigitsRuns {
        out: tempfile::tempdir().expect("temp dir"),
        m2: None,
    };
    let passed = [
        report("1 signature exactness", signature_exactness()),
        report("2 signature algebra", signature_algebra()),
        report("3 dimension formula", dimension_formula()),
        report("4 sparse equals dense", sparse_dense()),
        report("5 gradient correctness", gradients()),
        report("6 path counts", path_counts()),
        report("7 architecture string", architecture()),
        report("8 MNIST sparsity", mnist_sparsity()),
        report("9 Pendigits truncation levels", pendigits(&mut runs)),
        report("10 reduced MNIST", mnist_subset()),
        report("11 determinism", determinism(&runs)),
    ];
    let ok = passed.iter().filter(|&&p| p).count();
    println!("{ok} of {} criteria passed", passed.len());
    if ok == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
