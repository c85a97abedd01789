//! Text renderings for `sigcnn inspect`.

use sigcnn::network::path_count_grid;
use sigcnn::raster::{normalize_character, rasterize, Character, RasterConfig};
use sigcnn::Result;

/// The dense `N x N x M` signature grid of one character, one CSV block of
/// `N` rows per channel, each block preceded by a `# channel c` line.
pub fn grid_csv(ch: &Character, cfg: &RasterConfig) -> Result<String> {
    let placed = normalize_character(ch, cfg.scale, cfg.side)?;
    let dense = rasterize(&placed, cfg)?.to_dense();
    let mut out = String::new();
    for k in 0..dense.channels {
        out.push_str(&format!("# channel {k}\n"));
        for r in 0..dense.side {
            let row: Vec<String> = (0..dense.side).map(|c| dense.cell(r, c)[k].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn pathcounts_csv(depth: usize) -> String {
    path_count_grid(depth).to_csv()
}

/// Parses the blocks written by [`grid_csv`] back into `[channel][row][col]`.
pub fn parse_grid_csv(text: &str) -> Vec<Vec<Vec<f32>>> {
    let mut channels: Vec<Vec<Vec<f32>>> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') {
            channels.push(Vec::new());
        } else if let Some(block) = channels.last_mut() {
            block.push(line.split(',').map(|v| v.parse().unwrap_or(f32::NAN)).collect());
        }
    }
    channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigcnn::signature::PiecewiseLinearPath;

    #[test]
    fn dot_has_one_nonzero_column() {
        let dot = Character::new(vec![PiecewiseLinearPath::from_xy(&[(3.0, 4.0)]).unwrap()], None);
        let text = grid_csv(&dot, &RasterConfig::new(24, 10, 2)).unwrap();
        let grid = parse_grid_csv(&text);
        assert_eq!(grid.len(), 7);
        let mut columns = Vec::new();
        for r in 0..24 {
            for c in 0..24 {
                let v: Vec<f32> = grid.iter().map(|ch| ch[r][c]).collect();
                if v.iter().any(|&x| x != 0.0) {
                    columns.push(v);
                }
            }
        }
        assert_eq!(columns, vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn pathcount_corner_and_plateau() {
        let text = pathcounts_csv(3);
        let rows: Vec<Vec<u64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 24);
        assert_eq!(rows[0][0], 1);
        for row in &rows[8..16] {
            assert!(row[8..16].iter().all(|&v| v == 144));
        }
    }
}
