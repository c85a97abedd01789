use super::DeepCNetConfig;

/// For every input cell, the number of distinct connectivity paths from it to
/// the fully-connected layer of a DeepCNet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCountGrid {
    pub side: usize,
    pub counts: Vec<u64>,
}

impl PathCountGrid {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.side + col]
    }

    /// One line per grid row, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks_exact(self.side) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Counts paths by propagating ones backwards from the final 2x2 layer: a
/// pooled cell passes its count to each of its four inputs, and a convolution
/// input sums the counts of every output whose filter covers it.
pub fn path_count_grid(depth: usize) -> PathCountGrid {
    let cfg = DeepCNetConfig::new(depth, 1, 1, 2);
    let mut side = 2;
    let mut counts = vec![1u64; side * side];
    for stage in (0..depth).rev() {
        let unpooled = side * 2;
        let mut up = vec![0u64; unpooled * unpooled];
        for r in 0..unpooled {
            for c in 0..unpooled {
                up[r * unpooled + c] = counts[(r / 2) * side + c / 2];
            }
        }
        let filter = if stage == 0 { 3 } else { 2 };
        let input = unpooled + filter - 1;
        let mut down = vec![0u64; input * input];
        for r in 0..unpooled {
            for c in 0..unpooled {
                let v = up[r * unpooled + c];
                for dr in 0..filter {
                    for dc in 0..filter {
                        down[(r + dr) * input + c + dc] += v;
                    }
                }
            }
        }
        side = input;
        counts = down;
    }
    debug_assert_eq!(side, cfg.input_side());
    PathCountGrid { side, counts }
}
