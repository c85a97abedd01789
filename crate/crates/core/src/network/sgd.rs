use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DeepCNet, Gradients, Mode, Scalar};
use crate::error::{Error, Result};
use crate::raster::SparseFeatureGrid;

/// Stochastic gradient descent with momentum:
/// `v <- momentum * v - lr * g`, `w <- w + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Gradients<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        SgdMomentum {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    /// One update on the mean softmax cross-entropy of `batch`; returns that
    /// mean loss.
    ///
    /// Samples are processed in parallel, each with its own generator seeded
    /// from `rng`, and their gradients are summed in batch order, so the
    /// result does not depend on the number of threads.
    pub fn train_batch<R: Rng + ?Sized>(
        &mut self,
        net: &mut DeepCNet<T>,
        batch: &[(&SparseFeatureGrid, usize)],
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("training batch".into()));
        }
        let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
        let model = &*net;
        let results: Vec<Result<(T, Gradients<T>)>> = batch
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&(grid, label), &seed)| {
                let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
                model.loss_and_gradients(grid, label, Mode::Train, &mut sample_rng)
            })
            .collect();

        let mut total = Gradients::zeros_like(net);
        let mut loss_sum = 0.0;
        for (i, r) in results.into_iter().enumerate() {
            let (loss, grads) = r?;
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() || !grads.is_finite() {
                let max_weight = net
                    .layers()
                    .iter()
                    .flat_map(|l| l.weights.iter())
                    .fold(0.0f64, |m, w| m.max(w.to_f64().unwrap().abs()));
                return Err(Error::Divergence(format!(
                    "sample {i} of batch gave loss {loss}; largest |weight| {max_weight:e}, lr {}",
                    self.learning_rate
                )));
            }
            loss_sum += loss;
            total.add_assign(&grads);
        }
        let n = batch.len() as f64;
        total.scale(T::of(1.0 / n));

        let lr = T::of(self.learning_rate);
        let mu = T::of(self.momentum);
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(net));
        net.update_layers(|layers| {
            for ((layer, (vw, vb)), (gw, gb)) in layers.iter_mut().zip(velocity.layers.iter_mut()).zip(&total.layers) {
                for ((w, v), &g) in layer.weights.iter_mut().zip(vw.iter_mut()).zip(gw) {
                    *v = mu * *v - lr * g;
                    *w += *v;
                }
                for ((b, v), &g) in layer.biases.iter_mut().zip(vb.iter_mut()).zip(gb) {
                    *v = mu * *v - lr * g;
                    *b += *v;
                }
            }
        });
        Ok(loss_sum / n)
    }
}

impl<T: Scalar> DeepCNet<T> {
    /// Predicted class of an input grid.
    pub fn predict(&self, grid: &SparseFeatureGrid) -> Result<usize> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(super::argmax(&self.forward_sparse(grid, Mode::Eval, &mut rng)?))
    }
}
