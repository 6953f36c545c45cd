//! From-scratch trainable models: an MLP over IQ frames plus CNN and ViT
//! over spectrogram tensors, with manual backprop, Adam, and versioned
//! checkpoints. No autograd framework; each layer implements its own
//! forward/backward pair, which keeps the whole stack finite-difference
//! checkable.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};
pub use layers::{Layer, LayerCache};
pub use loss::{batch_cross_entropy, cross_entropy, softmax};
pub use model::{
    build_architecture, ArchKind, ArchitectureConfig, CnnConfig, Model, ModelParams, MlpConfig,
    TrainingMeta, VitConfig,
};
pub use train::{accuracy, sharded_loss_and_grads, train, Dataset, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayD};

/// Scalar type the network stack is generic over: f32 for training, f64 for
/// finite-difference verification.
pub trait Dtype:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Dtype for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Dtype for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Probability vector over the label set (softmax output).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub probs: Vec<f32>,
}

impl PredictionVector {
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParams("probability outside [0,1]".into()));
        }
        let sum: f32 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Argmax with the deterministic lowest-index tiebreak.
    pub fn argmax(&self) -> usize {
        let mut best = 0usize;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn confidence(&self) -> f32 {
        self.probs[self.argmax()]
    }
}

/// A minibatch: inputs of shape (N, ...) and one-hot labels (N, |L|).
#[derive(Debug, Clone)]
pub struct Batch<F: Dtype> {
    pub inputs: ArrayD<F>,
    pub labels: Array2<F>,
}

impl<F: Dtype> Batch<F> {
    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.shape()[0];
        if n == 0 {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        if self.labels.shape()[0] != n {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs vs {} label rows",
                n,
                self.labels.shape()[0]
            )));
        }
        for row in self.labels.rows() {
            let mut ones = 0;
            for v in row.iter() {
                if *v == F::one() {
                    ones += 1;
                } else if *v != F::zero() {
                    return Err(Error::InvalidParams("label row is not one-hot".into()));
                }
            }
            if ones != 1 {
                return Err(Error::InvalidParams("label row is not one-hot".into()));
            }
        }
        Ok(())
    }
}
