use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigcnn::network::{path_count_grid, DeepCNet, DeepCNetConfig, DenseTensor, Mode};
use sigcnn::raster::{GridKind, SparseFeatureGrid};

fn random_net(cfg: DeepCNetConfig, seed: u64) -> DeepCNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DeepCNet::<f64>::new(cfg, &mut rng).unwrap();
    net.update_layers(|layers| {
        for l in layers {
            for b in &mut l.biases {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
    });
    net
}

fn random_grid(side: usize, channels: usize, active: usize, span: usize, rng: &mut impl Rng) -> SparseFeatureGrid {
    let cells: Vec<_> = (0..active)
        .map(|_| {
            let mut v = vec![1.0f32];
            v.extend((1..channels).map(|_| rng.gen_range(-2.0f32..2.0)));
            ((rng.gen_range(0..span), rng.gen_range(0..span)), v)
        })
        .collect();
    SparseFeatureGrid::from_cells(side, channels, GridKind::Signature, cells).unwrap()
}

fn no_dropout() -> rand::rngs::mock::StepRng {
    rand::rngs::mock::StepRng::new(0, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_matches_dense(
        depth in 1usize..4, filters in 1usize..6, channels in 1usize..8, active in 0usize..60, seed in any::<u64>(),
    ) {
        let net = random_net(DeepCNetConfig::new(depth, filters, channels, 4), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let side = net.config().input_side();
        let grid = random_grid(side, channels, active, side, &mut rng);
        let sparse = net.forward_sparse(&grid, Mode::Eval, &mut no_dropout()).unwrap();
        let dense_layers = net.forward_dense_layers(&DenseTensor::from_grid(&grid.to_dense())).unwrap();
        let states = net.sparse_states(&grid).unwrap();
        prop_assert_eq!(states.len(), dense_layers.len());
        for (s, d) in states.iter().zip(&dense_layers) {
            prop_assert_eq!(s.side(), d.side);
            for (x, y) in s.to_dense().iter().zip(&d.data) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }
        let dense = &dense_layers.last().unwrap().data;
        for (x, y) in sparse.iter().zip(dense) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }

        let single = net.cast::<f32>();
        let sparse32 = single.forward_sparse(&grid, Mode::Eval, &mut no_dropout()).unwrap();
        let scale = dense.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        for (x, y) in sparse32.iter().zip(dense) {
            prop_assert!((*x as f64 - y).abs() / scale <= 1e-5);
        }
    }

    #[test]
    fn ground_states_match_zero_input(depth in 1usize..4, filters in 1usize..5, seed in any::<u64>()) {
        let net = random_net(DeepCNetConfig::new(depth, filters, 3, 3), seed);
        let side = net.config().input_side();
        let layers = net.forward_dense_layers(&DenseTensor::zeros(side, 3)).unwrap();
        for (ground, dense) in net.compute_ground_states().iter().zip(&layers) {
            for cell in dense.data.chunks_exact(dense.channels) {
                for (a, b) in cell.iter().zip(ground) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    /// Shifting the input by `2^l` shifts every pooled layer `j` by `2^(l-j)`.
    #[test]
    fn pooled_features_translate_with_the_input(active in 1usize..25, seed in any::<u64>()) {
        let depth = 3;
        let net = random_net(DeepCNetConfig::new(depth, 3, 3, 3), seed);
        let side = net.config().input_side();
        let shift = 1usize << depth;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let grid = random_grid(side, 3, active, side - shift, &mut rng);
        let moved = grid.shifted(side, shift as i64, shift as i64);
        prop_assert_eq!(moved.active_count(), grid.active_count());
        let a = net.sparse_states(&grid).unwrap();
        let b = net.sparse_states(&moved).unwrap();
        for j in 1..=depth {
            let (sa, sb) = (&a[2 * j - 1], &b[2 * j - 1]);
            let s = shift >> j;
            for r in 0..sa.side().saturating_sub(s) {
                for c in 0..sa.side() - s {
                    for (x, y) in sa.value_at(r, c).iter().zip(sb.value_at(r + s, c + s)) {
                        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
                    }
                }
            }
            for &(r, c) in sa.locations() {
                if r + s < sb.side() && c + s < sb.side() {
                    prop_assert!(sb.lookup(r + s, c + s).is_some());
                }
            }
        }
    }
}

#[test]
fn single_corner_cell_has_small_active_sets() {
    let net = random_net(DeepCNetConfig::new(4, 2, 1, 2), 3);
    let side = net.config().input_side();
    let grid =
        SparseFeatureGrid::from_cells(side, 1, GridKind::Signature, [((side - 1, side - 1), vec![1.0])]).unwrap();
    let states = net.sparse_states(&grid).unwrap();
    let sides = net.config().spatial_trace();
    for (s, &n) in states.iter().zip(&sides) {
        assert!(s.active_count() <= 1, "{} active of {}", s.active_count(), n * n);
    }
    let center =
        SparseFeatureGrid::from_cells(side, 1, GridKind::Signature, [((side / 2, side / 2), vec![1.0])]).unwrap();
    let states = net.sparse_states(&center).unwrap();
    // A 3x3 filter touches 9 outputs; 2x2 filters and pooling then keep the set tiny.
    assert_eq!(states[0].active_count(), 9);
    for (s, &n) in states.iter().zip(&sides) {
        assert!(s.active_count() <= 9.min(n * n));
    }
}

/// Counts input-to-top paths by explicit depth-first enumeration over the
/// layer connectivity graph.
fn enumerate_paths(depth: usize, row: usize, col: usize) -> u64 {
    fn walk(stages: &[(usize, usize)], pos: (usize, usize)) -> u64 {
        let Some((&(filter, out_side), rest)) = stages.split_first() else {
            return 1;
        };
        let mut total = 0;
        for dr in 0..filter {
            for dc in 0..filter {
                if pos.0 < dr || pos.1 < dc {
                    continue;
                }
                let (r, c) = (pos.0 - dr, pos.1 - dc);
                if r < out_side && c < out_side {
                    // Pooling: each conv output feeds exactly one pooled cell.
                    let pooled = (r / 2, c / 2);
                    if pooled.0 < out_side / 2 && pooled.1 < out_side / 2 {
                        total += walk(rest, pooled);
                    }
                }
            }
        }
        total
    }
    let mut side = 3 << depth;
    let mut stages = Vec::new();
    for n in 1..=depth {
        let f = if n == 1 { 3 } else { 2 };
        stages.push((f, side + 1 - f));
        side = (side + 1 - f) / 2;
    }
    walk(&stages, (row, col))
}

#[test]
fn path_counts_match_enumeration() {
    for depth in 1..=2 {
        let grid = path_count_grid(depth);
        let side = 3 << depth;
        for r in 0..side {
            for c in 0..side {
                assert_eq!(grid.get(r, c), enumerate_paths(depth, r, c), "l={depth} ({r},{c})");
            }
        }
    }
}

#[test]
fn path_count_plateau() {
    for depth in 1..=5usize {
        let grid = path_count_grid(depth);
        let side = 3 << depth;
        let third = side / 3;
        let plateau = 9 * 4u64.pow(depth as u32 - 1);
        for (r, c) in [(0, 0), (0, side - 1), (side - 1, 0), (side - 1, side - 1)] {
            assert_eq!(grid.get(r, c), 1);
        }
        for r in third..2 * third {
            for c in third..2 * third {
                assert_eq!(grid.get(r, c), plateau);
            }
        }
        let max = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .map(|(r, c)| grid.get(r, c))
            .max();
        assert_eq!(max, Some(plateau));
    }
}
