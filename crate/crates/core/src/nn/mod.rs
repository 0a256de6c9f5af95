//! Dense-network machinery: fully connected layers, ReLU, label-smoothed
//! cross-entropy, AdamW with a warmup/cosine schedule, and weight EMA.
//!
//! Parameters are handled as ordered lists of flat `f64` slices so the
//! optimizer, EMA and checkpoint code stay independent of network layout.

mod dense;
mod ema;
mod loss;
mod optim;

pub use dense::{dense_forward, relu, relu_backward_inplace, relu_inplace, DenseGrads, DenseLayer};
pub use ema::EmaState;
pub use loss::{
    cross_entropy, log_softmax, smoothed_cross_entropy, smoothed_cross_entropy_batch,
    smoothed_targets,
};
pub use optim::{adamw_step, AdamWConfig, CosineSchedule, OptimizerState};

use crate::error::{Error, Result};

pub(crate) fn check_shapes(expected: &[usize], actual: impl Iterator<Item = usize>) -> Result<()> {
    let actual: Vec<usize> = actual.collect();
    if actual.len() != expected.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            actual: actual.len(),
        });
    }
    for (e, a) in expected.iter().zip(&actual) {
        if e != a {
            return Err(Error::DimensionMismatch {
                expected: *e,
                actual: *a,
            });
        }
    }
    Ok(())
}
