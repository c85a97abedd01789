//! Central finite-difference check of the analytic gradients.

use super::{DeepCNet, Gradients, Mode};
use crate::error::Result;
use crate::raster::SparseFeatureGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorGradientError {
    /// 1-based layer index.
    pub layer: usize,
    pub tensor: &'static str,
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub relative_error: f64,
    pub max_abs_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub tensors: Vec<TensorGradientError>,
}

impl GradientReport {
    pub fn worst_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.relative_error).fold(0.0, f64::max)
    }
}

fn batch_loss(net: &DeepCNet<f64>, batch: &[(&SparseFeatureGrid, usize)]) -> Result<f64> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut total = 0.0;
    for &(grid, label) in batch {
        total += net.loss_and_gradients(grid, label, Mode::Eval, &mut rng)?.0;
    }
    Ok(total / batch.len() as f64)
}

fn analytic(net: &DeepCNet<f64>, batch: &[(&SparseFeatureGrid, usize)]) -> Result<Gradients<f64>> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut total = Gradients::zeros_like(net);
    for &(grid, label) in batch {
        total.add_assign(&net.loss_and_gradients(grid, label, Mode::Eval, &mut rng)?.1);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

fn compare(layer: usize, tensor: &'static str, a: &[f64], n: &[f64]) -> TensorGradientError {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    TensorGradientError {
        layer,
        tensor,
        relative_error: if scale == 0.0 { 0.0 } else { norm(&diff) / scale },
        max_abs_difference: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
    }
}

/// Compares backpropagated gradients of the mean batch loss (no dropout)
/// against central differences with step `eps`, for every parameter.
pub fn check_gradients(net: &DeepCNet<f64>, batch: &[(&SparseFeatureGrid, usize)], eps: f64) -> Result<GradientReport> {
    let grads = analytic(net, batch)?;
    let mut probe = net.clone();
    let mut tensors = Vec::new();
    for li in 0..net.layers().len() {
        for tensor in ["weights", "biases"] {
            let len = match tensor {
                "weights" => net.layers()[li].weights.len(),
                _ => net.layers()[li].biases.len(),
            };
            let mut numeric = Vec::with_capacity(len);
            for j in 0..len {
                let set = |probe: &mut DeepCNet<f64>, delta: f64| {
                    probe.update_layers(|layers| {
                        let slot = match tensor {
                            "weights" => &mut layers[li].weights[j],
                            _ => &mut layers[li].biases[j],
                        };
                        *slot += delta;
                    })
                };
                let original = match tensor {
                    "weights" => net.layers()[li].weights[j],
                    _ => net.layers()[li].biases[j],
                };
                set(&mut probe, eps);
                let up = batch_loss(&probe, batch)?;
                set(&mut probe, -2.0 * eps);
                let down = batch_loss(&probe, batch)?;
                probe.update_layers(|layers| match tensor {
                    "weights" => layers[li].weights[j] = original,
                    _ => layers[li].biases[j] = original,
                });
                numeric.push((up - down) / (2.0 * eps));
            }
            let (gw, gb) = &grads.layers[li];
            let a = if tensor == "weights" { gw } else { gb };
            tensors.push(compare(li + 1, tensor, a, &numeric));
        }
    }
    Ok(GradientReport { tensors })
}
