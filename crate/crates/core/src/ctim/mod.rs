//! Contrastive text-image module: a five-unit convolutional image encoder,
//! a four-group multi-scale text encoder over a learned entity-embedding
//! table, cosine similarity compressed to [0, 1], and BCE training.

mod model;
mod train;

pub use model::{AttributeVocab, CtimModel, VtiSample};
pub use train::{eval_ctim, train_ctim, CtimEpochStats, CtimEval, CtimTrainConfig, SampleSource};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{s, Scalar};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum CtimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model error: {0}")]
    Model(String),
}

/// Architecture hyperparameters. Defaults follow the shipped configuration:
/// 64x64x3 inputs, five channel-doubling encoder units from an 8-channel
/// stem, a `n_slots x 300` entity-embedding matrix, full-width text kernels
/// with `n_follow_convs` stacked convs per group, and a 0.7 consistency
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtimConfig {
    pub image_hw: usize,
    pub image_channels: usize,
    pub stem_channels: usize,
    pub n_units: usize,
    pub embed_dim: usize,
    pub n_slots: usize,
    pub n_follow_convs: usize,
    pub group_channels: usize,
    pub joint_dim: usize,
    pub consistency_threshold: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for CtimConfig {
    fn default() -> Self {
        CtimConfig {
            image_hw: 64,
            image_channels: 3,
            stem_channels: 8,
            n_units: 5,
            embed_dim: 300,
            n_slots: 3,
            n_follow_convs: 2,
            group_channels: 64,
            joint_dim: 128,
            consistency_threshold: 0.7,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl CtimConfig {
    pub fn validate(&self) -> Result<(), CtimError> {
        if self.image_hw % (1 << self.n_units) != 0 {
            return Err(CtimError::InvalidInput(format!(
                "image size {} must be divisible by 2^{}",
                self.image_hw, self.n_units
            )));
        }
        if self.n_slots < 3 {
            return Err(CtimError::InvalidInput(
                "text encoder needs at least 3 slots for its kernel heights".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.consistency_threshold) {
            return Err(CtimError::InvalidInput("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Channel count after the final encoder unit.
    pub fn final_channels(&self) -> usize {
        self.stem_channels << self.n_units
    }
}

/// Cosine of two equal-length non-zero vectors, in [-1, 1].
pub fn cosine_distance<S: Scalar>(a: &[S], b: &[S]) -> Result<S, TensorError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TensorError::Shape(format!(
            "cosine_distance: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = S::zero();
    let mut na = S::zero();
    let mut nb = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na.to_f64() <= 0.0 || nb.to_f64() <= 0.0 {
        return Err(TensorError::DegenerateInput("cosine of a zero vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Linear compression from [-1, 1] to [0, 1]: `x / 2 + 1 / 2`.
pub fn compress<S: Scalar>(x: S) -> Result<S, TensorError> {
    let v = x.to_f64();
    if !(-1.0..=1.0).contains(&v) {
        return Err(TensorError::Domain(format!(
            "compress input {v} outside [-1, 1]"
        )));
    }
    Ok(x * s::<S>(0.5) + s::<S>(0.5))
}

/// Summed binary cross entropy of compressed raw similarities; inputs are
/// clamped away from the endpoints before the logarithms.
pub fn ctim_loss<S: Scalar>(labels: &[S], y_hat: &[S]) -> Result<S, CtimError> {
    if labels.len() != y_hat.len() {
        return Err(CtimError::InvalidInput("labels/similarities length mismatch".into()));
    }
    let yh = crate::tensor::Tensor::from_vec(&[y_hat.len()], y_hat.to_vec())
        .map_err(CtimError::Tensor)?;
    let y = crate::tensor::Tensor::from_vec(&[labels.len()], labels.to_vec())
        .map_err(CtimError::Tensor)?;
    Ok(crate::tensor::kernels::bce_compress_loss(&yh, &y)?.item())
}

/// Consistency decision at the given threshold, boundary inclusive.
pub fn is_consistent(sim: f64, threshold: f64) -> bool {
    sim >= threshold
}
