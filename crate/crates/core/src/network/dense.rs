//! Plain dense evaluation, used as the reference for the sparse pass.

use super::{DeepCNet, Scalar};
use crate::error::{Error, Result};
use crate::raster::DenseGrid;

/// `side x side x channels`, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn zeros(side: usize, channels: usize) -> Self {
        DenseTensor {
            side,
            channels,
            data: vec![T::zero(); side * side * channels],
        }
    }

    pub fn from_grid(grid: &DenseGrid) -> Self {
        DenseTensor {
            side: grid.side,
            channels: grid.channels,
            data: grid.data.iter().map(|&x| T::of(x as f64)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, k: usize) -> T {
        self.data[(r * self.side + c) * self.channels + k]
    }
}

impl<T: Scalar> DeepCNet<T> {
    /// Dense forward pass returning the output of every layer: conv1, pool1,
    /// ..., conv l, pool l, fully-connected, class scores.
    pub fn forward_dense_layers(&self, input: &DenseTensor<T>) -> Result<Vec<DenseTensor<T>>> {
        let cfg = self.config();
        if input.side != cfg.input_side() || input.channels != cfg.input_channels {
            return Err(Error::Shape {
                expected: format!("{0}x{0}x{1} input", cfg.input_side(), cfg.input_channels),
                actual: format!("{0}x{0}x{1} array", input.side, input.channels),
            });
        }
        let mut outputs = Vec::new();
        let mut x = input.clone();
        for (i, layer) in self.layers().iter().enumerate() {
            let f = layer.filter;
            let side = x.side + 1 - f;
            let mut y = DenseTensor::zeros(side, layer.outputs);
            for r in 0..side {
                for c in 0..side {
                    for o in 0..layer.outputs {
                        let mut z = layer.biases[o];
                        for dr in 0..f {
                            for dc in 0..f {
                                let pos = dr * f + dc;
                                for k in 0..layer.inputs {
                                    let w = layer.weights[(pos * layer.inputs + k) * layer.outputs + o];
                                    z += w * x.at(r + dr, c + dc, k);
                                }
                            }
                        }
                        if let Some(act) = self.activation_of(i) {
                            z = act.apply(z);
                        }
                        y.data[(r * side + c) * layer.outputs + o] = z;
                    }
                }
            }
            outputs.push(y.clone());
            x = y;
            if i < cfg.depth {
                let half = x.side / 2;
                let mut p = DenseTensor::zeros(half, x.channels);
                for r in 0..half {
                    for c in 0..half {
                        for k in 0..x.channels {
                            let mut m = x.at(2 * r, 2 * c, k);
                            for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                                m = m.max(x.at(2 * r + dr, 2 * c + dc, k));
                            }
                            p.data[(r * half + c) * x.channels + k] = m;
                        }
                    }
                }
                outputs.push(p.clone());
                x = p;
            }
        }
        Ok(outputs)
    }

    /// Class scores from the dense pass.
    pub fn forward_dense(&self, input: &DenseTensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_dense_layers(input)?.pop().unwrap().data)
    }
}
