//! Unsigned distance fields over joint space.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use network::{
    DenseShape, FieldArchitecture, FieldModel, OutputNonlinearity, DEFAULT_ENCODER_HIDDEN, DEFAULT_HEAD_HIDDEN,
    DEFAULT_LATENT_DIM, SILU_GAIN,
};
pub use train::{train_field, EpochStats, TrainConfig, TrainHistory};

use crate::corpus::PoseCorpus;
use crate::error::{check_len, Result};

/// Anything that maps a configuration to a non-negative distance with a
/// (sub)gradient. Implementations are immutable and shareable across threads.
pub trait DistanceField: Sync {
    fn n_joints(&self) -> usize;

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(q)?.0)
    }

    fn value_and_gradient(&self, q: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl DistanceField for FieldModel {
    fn n_joints(&self) -> usize {
        FieldModel::n_joints(self)
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        self.predict(q)
    }

    fn value_and_gradient(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        FieldModel::value_and_gradient(self, q)
    }
}

/// Exact field backed by a corpus: the value is the nearest L1 distance and
/// the gradient is `sign(q - nearest)` componentwise, zero where equal.
#[derive(Debug, Clone, Copy)]
pub struct OracleField<'a> {
    corpus: &'a PoseCorpus,
}

impl<'a> OracleField<'a> {
    pub fn new(corpus: &'a PoseCorpus) -> Self {
        OracleField { corpus }
    }

    pub fn corpus(&self) -> &'a PoseCorpus {
        self.corpus
    }
}

impl DistanceField for OracleField<'_> {
    fn n_joints(&self) -> usize {
        self.corpus.n_joints()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(self.corpus.nearest(q)?.distance)
    }

    fn value_and_gradient(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.corpus.n_joints(), q.len())?;
        let hit = self.corpus.nearest(q)?;
        let row = self.corpus.row(hit.index);
        let grad = q
            .iter()
            .zip(row)
            .map(|(a, b)| match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => -1.0,
                _ => 0.0,
            })
            .collect();
        Ok((hit.distance, grad))
    }
}
