//! Training loop: Adam with decoupled weight decay, cosine-annealed learning
//! rate, seeded shuffling, per-epoch validation, and early stopping.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_decayed, Batch, Model, ModelError, ParamStore};
use crate::tensor::Mat;
use crate::vocab::EncodedExample;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} set")]
    EmptyData(&'static str),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay (subtracted from the parameter directly) when
    /// true; classic L2 added to the gradient when false.
    pub decoupled_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.005,
            weight_decay: 1e-4,
            lr_min: 1e-6,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            decoupled_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr_min >= self.lr_max {
            return Err(TrainError::InvalidConfig(format!(
                "lr_min {} must be below lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine annealing from lr_max at epoch 0 to lr_min at max_epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = epoch as f64 / cfg.max_epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam first/second moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Mat>,
    pub second: BTreeMap<String, Mat>,
}

impl AdamState {
    pub fn for_params(params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Mat> = params
            .tensors
            .iter()
            .map(|(k, m)| (k.clone(), Mat::zeros(m.rows, m.cols)))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update with bias correction. Weight decay skips biases and
/// layer-norm gains.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Mat>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for (name, theta) in params.tensors.iter_mut() {
        let g = match grads.get(name) {
            Some(g) => g,
            None => continue,
        };
        let decay = if is_decayed(name) { cfg.weight_decay } else { 0.0 };
        let m = state.first.get_mut(name).expect("moment shape");
        let v = state.second.get_mut(name).expect("moment shape");
        for i in 0..theta.data.len() {
            let mut grad = g.data[i];
            if !cfg.decoupled_decay {
                grad += decay * theta.data[i];
            }
            m.data[i] = cfg.adam_beta1 * m.data[i] + (1.0 - cfg.adam_beta1) * grad;
            v.data[i] = cfg.adam_beta2 * v.data[i] + (1.0 - cfg.adam_beta2) * grad * grad;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            theta.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if cfg.decoupled_decay {
                theta.data[i] -= lr * decay * theta.data[i];
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_nll: f64,
    pub val_nll: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged,
}

pub struct TrainOutcome {
    pub best_model: Model,
    pub best_val_nll: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
}

/// Runs the full optimization loop. Each epoch shuffles the training set
/// with a seeded RNG, steps Adam at the cosine-annealed rate, then validates;
/// the best-validation parameters are kept. On divergence the last good
/// parameters are returned with `StopReason::Diverged`.
pub fn train(
    mut model: Model,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyData("val"));
    }
    let val_refs: Vec<&EncodedExample> = val_set.iter().collect();
    let val_batch = Batch::from_examples(&val_refs);

    let mut adam = AdamState::for_params(&model.params);
    let mut log = Vec::new();
    let mut best: Option<(Model, f64, usize)> = None;
    let mut epochs_since_best = 0usize;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_nll = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|i| &train_set[*i]).collect();
            let batch = Batch::from_examples(&refs);
            let dropout_seed = cfg
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((epoch as u64) << 20)
                .wrapping_add(batch_idx as u64);
            let step = model
                .loss_and_grad(&batch, Some(dropout_seed))
                .and_then(|(loss, grads)| {
                    adam_step(&mut model.params, &grads, &mut adam, lr, cfg)
                        .map_err(|_| ModelError::NonFiniteLoss)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => {
                    epoch_nll += loss;
                    n_batches += 1;
                }
                Err(ModelError::NonFiniteLoss) => {
                    stop = StopReason::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let val_nll = match model.loss_eval(&val_batch) {
            Ok(v) => v,
            Err(ModelError::NonFiniteLoss) => {
                stop = StopReason::Diverged;
                break 'epochs;
            }
            Err(e) => return Err(e.into()),
        };
        log.push(EpochLog {
            epoch,
            lr,
            train_nll: epoch_nll / n_batches.max(1) as f64,
            val_nll,
            seconds: start.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_nll < *b);
        if improved {
            best = Some((model.clone(), val_nll, epoch));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }

    let (best_model, best_val_nll, best_epoch) = best.unwrap_or({
        // diverged before the first validation; hand back the initial state
        (model, f64::INFINITY, 0)
    });
    Ok(TrainOutcome {
        best_model,
        best_val_nll,
        best_epoch,
        log,
        stop,
    })
}

/// Training log as CSV: `epoch,lr,train_nll,val_nll,seconds`.
pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,lr,train_nll,val_nll,seconds\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            e.epoch, e.lr, e.train_nll, e.val_nll, e.seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
