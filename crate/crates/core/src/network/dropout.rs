use rand::Rng;

use super::{Mode, Scalar};

/// Inverted dropout on a vector: in train mode each component is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode
/// leaves the input untouched.
pub fn apply_dropout<T: Scalar, R: Rng + ?Sized>(values: &mut [T], rate: f64, mode: Mode, rng: &mut R) {
    if mode == Mode::Eval {
        return;
    }
    if let Some(mask) = channel_mask::<T, R>(values.len(), rate, rng) {
        for (v, m) in values.iter_mut().zip(mask) {
            *v = *v * m;
        }
    }
}

/// Per-channel multipliers for one sample, or `None` when `rate == 0`. The
/// sparse pass shares one mask across all cells of a layer, ground state
/// included, so inactive cells stay interchangeable.
pub(crate) fn channel_mask<T: Scalar, R: Rng + ?Sized>(width: usize, rate: f64, rng: &mut R) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Some(
        (0..width)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

/// Named per-level dropout schedules for a DeepCNet of depth `l` (rates for
/// conv layers `1..=l`, the fully-connected layer and the classifier).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutSchedule {
    None,
    /// A fixed rate on the input of the fourth parameterized layer and above.
    FromFourthLayer(f64),
    /// Rates rising by 0.1 per level to 0.5 at the classifier input; for
    /// `l = 6` this is `0, 0, 0, 0.1, 0.2, 0.3, 0.4, 0.5`.
    Graded,
}

impl DropoutSchedule {
    pub fn rates(self, depth: usize) -> Vec<f64> {
        let levels = depth + 2;
        (0..levels)
            .map(|i| match self {
                DropoutSchedule::None => 0.0,
                DropoutSchedule::FromFourthLayer(rate) => {
                    if i >= 3 {
                        rate
                    } else {
                        0.0
                    }
                }
                DropoutSchedule::Graded => {
                    let from_top = (levels - 1 - i) as f64;
                    ((5.0 - from_top) / 10.0).max(0.0)
                }
            })
            .collect()
    }
}
