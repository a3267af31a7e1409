use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{FieldModel, Workspace};
use crate::error::{Error, Result};
use crate::sampler::{derive_seed, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && (0.0..=0.5).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("training configuration out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained model; training epochs count from 1.
    pub epoch: usize,
    /// Mean absolute error over the training split. For trained epochs this
    /// is the running mean of the per-batch errors seen during the epoch.
    pub train_mae: f64,
    /// `None` when the validation split is empty.
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial: EpochStats,
    pub epochs: Vec<EpochStats>,
    pub train_count: usize,
    pub val_count: usize,
}

impl TrainHistory {
    pub fn last(&self) -> &EpochStats {
        self.epochs.last().unwrap_or(&self.initial)
    }

    /// `epoch,train_mae,val_mae`, starting with epoch 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,val_mae\n");
        for e in std::iter::once(&self.initial).chain(&self.epochs) {
            let val = e.val_mae.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(out, "{},{:?},{}", e.epoch, e.train_mae, val).expect("writing to a string");
        }
        out
    }
}

/// Minimizes the mean absolute error between predictions and labels with
/// Adam over seed-shuffled mini-batches.
///
/// The split into training and validation rows, the per-epoch shuffles and
/// every reduction are deterministic, so equal inputs give equal histories.
pub fn train_field(
    mut model: FieldModel,
    data: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(FieldModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteParameters);
    }
    let k = model.n_joints();
    if let Some(bad) = data.iter().find(|s| s.q.len() != k) {
        return Err(Error::dims(k, bad.q.len()));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5_9117)));
    let n_val = ((data.len() as f64 * cfg.validation_fraction) as usize).min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut q = Vec::with_capacity(idx.len() * k);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            q.extend_from_slice(&data[i].q);
            y.push(data[i].label);
        }
        (q, y)
    };
    let (train_q, train_y) = gather(train_idx);
    let (val_q, val_y) = gather(val_idx);
    let n_train = train_y.len();

    let mae = |model: &FieldModel, q: &[f64], y: &[f64]| -> Result<Option<f64>> {
        if y.is_empty() {
            return Ok(None);
        }
        let pred = model.predict_batch(q)?;
        Ok(Some(pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64))
    };
    let initial = EpochStats {
        epoch: 0,
        train_mae: mae(&model, &train_q, &train_y)?.expect("training split is nonempty"),
        val_mae: mae(&model, &val_q, &val_y)?,
    };

    let n_params = model.parameter_count();
    let mut grad = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0i32;
    let mut ws = Workspace::default();
    let mut batch_q = Vec::with_capacity(cfg.batch_size * k);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut dpred = Vec::with_capacity(cfg.batch_size);
    let mut perm: Vec<usize> = (0..n_train).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        perm.sort_unstable();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64)));
        let mut abs_sum = 0.0;
        for chunk in perm.chunks(cfg.batch_size) {
            batch_q.clear();
            batch_y.clear();
            for &i in chunk {
                batch_q.extend_from_slice(&train_q[i * k..(i + 1) * k]);
                batch_y.push(train_y[i]);
            }
            model.forward(&batch_q, &mut ws);
            let inv_b = 1.0 / chunk.len() as f64;
            dpred.clear();
            for (p, t) in ws.predictions().iter().zip(&batch_y) {
                let r = p - t;
                abs_sum += r.abs();
                dpred.push(if r > 0.0 {
                    inv_b
                } else if r < 0.0 {
                    -inv_b
                } else {
                    0.0
                });
            }
            if !abs_sum.is_finite() {
                return Err(Error::DivergedLoss(epoch));
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward(&batch_q, &dpred, &mut ws, Some(&mut grad), None);

            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            let lr = cfg.learning_rate;
            model.update_parameters(|p| {
                for i in 0..p.len() {
                    let g = grad[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
                }
            });
            if !model.is_finite() {
                return Err(Error::DivergedLoss(epoch));
            }
        }
        epochs.push(EpochStats { epoch, train_mae: abs_sum / n_train as f64, val_mae: mae(&model, &val_q, &val_y)? });
    }
    let history = TrainHistory { initial, epochs, train_count: n_train, val_count: n_val };
    Ok((model, history))
}
