//! Time-adjust (dense) and album (recurrent) networks, training loops,
//! gradient checking and weight files.

mod album_net;
mod dense_net;
mod gradcheck;
mod layers;
mod optim;
mod train;
mod weights;

pub use album_net::{AlbumBatch, AlbumNet, AlbumNetSpec, DEFAULT_LSTM_HIDDEN};
pub use dense_net::{accuracy, argmax, DenseNet, DenseNetSpec, M2Dataset, TABLE_HIDDEN_WIDTH};
pub use gradcheck::{gradient_check, GradientReport};
pub use layers::{Activation, BlockCache, Pass};
pub use optim::{Adagrad, Adam, Optimizer};
pub use train::{sample_one_album_per_user, train_m2, train_m3, EpochRecord, TrainConfig, TrainHistory};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, SavedModel, WEIGHTS_VERSION,
};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("malformed album: {0}")]
    MalformedAlbum(String),
    #[error("loss diverged at epoch {epoch}, batch {batch} (last finite loss {last_finite_loss})")]
    Divergence {
        epoch: u32,
        batch: usize,
        last_finite_loss: f64,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("weights checksum mismatch")]
    Checksum,
    #[error("malformed weights file: {0}")]
    Malformed(String),
}

/// Shared interface used by the training loop and the gradient checker.
pub trait Network: Clone {
    type Batch;

    /// Same shape, all parameters zero; used as a gradient accumulator.
    fn zeros_like(&self) -> Self;

    /// Mean loss and its gradient with respect to every parameter, plus the
    /// per-block caches carrying batch statistics for running-average updates.
    fn loss_and_grads<R: Rng>(
        &self,
        batch: &Self::Batch,
        pass: Pass,
        rng: &mut R,
    ) -> Result<(f64, Self, Vec<BlockCache>), ModelError>;

    /// Inference-mode loss.
    fn loss(&self, batch: &Self::Batch) -> Result<f64, ModelError>;

    fn apply_batch_stats(&mut self, caches: &[BlockCache]);

    /// Trainable parameter slices, in a fixed order.
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Normalisation running statistics, in a fixed order.
    fn running(&self) -> Vec<&[f64]>;
    fn running_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Class with the highest mean probability across a user's images; lowest
/// index wins ties.
pub fn user_average_predict(rows: &[&[f64]]) -> Result<usize, ModelError> {
    let first = rows.first().ok_or(ModelError::EmptyInput)?;
    let width = first.len();
    if width == 0 {
        return Err(ModelError::EmptyInput);
    }
    let mut mean = vec![0.0; width];
    for row in rows {
        if row.len() != width {
            return Err(ModelError::Dimension {
                expected: width,
                found: row.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    Ok(argmax(&mean))
}
