//! Training loops: seeded shuffling, minibatch gradient accumulation,
//! cosine learning-rate decay, best-validation snapshots, and early stopping.

mod adam;
mod checkpoint;

pub use adam::{cosine_lr, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC, VERSION};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{time_mask, DecisionWindow};
use crate::error::{Error, Result};
use crate::swcnn::{multitask_loss, SwCnnParams};
use crate::swim::SwimParams;
use crate::tensor::{Graph, Mode, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate for the `swcnn.*` group when fine-tuning the full
    /// decoder; `None` trains everything at `lr`.
    pub cnn_lr: Option<f64>,
    pub weight_decay: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Time-mask strength; 0 disables masking.
    pub beta: f64,
    /// Subject-head loss weight (CNN training only).
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            cnn_lr: None,
            weight_decay: 1e-4,
            patience: 10,
            seed: 0,
            beta: 1.0,
            gamma: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("trainer: epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("trainer: bad learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("trainer: beta {} not in [0,1]", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// Outcome of one training run: per-epoch history plus the best-validation
/// parameter snapshot.
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Tensors of the best snapshot, ready for [`save_checkpoint`].
    pub best_tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// `epoch,train_loss,train_acc,val_acc,lr` per line.
pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,train_acc,val_acc,lr\n");
    for e in history {
        s.push_str(&format!(
            "{},{:.6},{:.4},{:.4},{:.6e}\n",
            e.epoch, e.train_loss, e.train_acc, e.val_acc, e.lr
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn window_tensor(w: &DecisionWindow, masked: Option<&[f32]>) -> Result<Tensor<f32>> {
    Tensor::from_data(&[w.n_channels, w.t], masked.unwrap_or(&w.x).to_vec())
}

/// Shared epoch skeleton for both models.
///
/// `run_window(window, train, graph) -> (loss tensor, locus correct)`; the
/// caller's closure owns the forward pass and loss.
fn train_loop<RunT, RunE>(
    config: &TrainConfig,
    train: &[DecisionWindow],
    val: &[DecisionWindow],
    mut run_train: RunT,
    mut run_eval: RunE,
    opt: &mut Adam<f32>,
    snapshot: impl Fn() -> Vec<(String, Vec<usize>, Vec<f32>)>,
) -> Result<TrainReport>
where
    RunT: FnMut(&Graph<f32>, &Tensor<f32>, &DecisionWindow) -> Result<(Tensor<f32>, bool)>,
    RunE: FnMut(&Tensor<f32>, &DecisionWindow) -> Result<bool>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_tensors = Vec::new();
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr_scale = cosine_lr(1.0, epoch, config.epochs);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            opt.zero_grad();
            let inv = 1.0 / batch.len() as f32;
            for &i in batch {
                let w = &train[i];
                let masked = if config.beta > 0.0 {
                    Some(time_mask(w, config.beta, &mut rng).x)
                } else {
                    None
                };
                let x = window_tensor(w, masked.as_deref())?;
                let g = Graph::new();
                let (loss, ok) = run_train(&g, &x, w)?;
                let v = loss.item() as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {}", epoch)));
                }
                loss_sum += v;
                correct += ok as usize;
                let scaled = g.scale(&loss, inv)?;
                g.backward(&scaled)?;
            }
            opt.step(lr_scale)?;
        }
        let mut val_correct = 0usize;
        for w in val {
            let x = window_tensor(w, None)?;
            val_correct += run_eval(&x, w)? as usize;
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc: val_correct as f64 / val.len() as f64,
            lr: config.lr * lr_scale,
        };
        let val_acc = stats.val_acc;
        history.push(stats);
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_tensors = snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok(TrainReport { history, best_epoch, best_val_acc: best_val, best_tensors })
}

fn argmax2(logits: &[f32]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Trains the short-window CNN on decision windows with the multitask loss.
pub fn train_swcnn(
    params: &SwCnnParams<f32>,
    train: &[DecisionWindow],
    val: &[DecisionWindow],
    config: &TrainConfig,
) -> Result<TrainReport> {
    let gamma = config.gamma;
    let mut opt = Adam::new(
        vec![(params.named_parameters(), config.lr)],
        AdamConfig { weight_decay: config.weight_decay, ..Default::default() },
    );
    train_loop(
        config,
        train,
        val,
        |g, x, w| {
            let logits = params.forward(g, x, Mode::Train)?;
            let loss = multitask_loss(g, &logits, w.locus_label, w.subject_label, gamma)?;
            let ok = argmax2(&logits.to_vec()) == w.locus_label;
            Ok((loss, ok))
        },
        |x, w| {
            let g = Graph::inference();
            let logits = params.forward(&g, x, Mode::Eval)?;
            Ok(argmax2(&logits.to_vec()) == w.locus_label)
        },
        &mut opt,
        || params.export_tensors(),
    )
}

/// Fine-tunes the full decoder on longer decision windows (locus loss only).
/// The `swcnn.*` parameters form their own group at `cnn_lr`.
pub fn train_swim(
    params: &SwimParams<f32>,
    train: &[DecisionWindow],
    val: &[DecisionWindow],
    config: &TrainConfig,
) -> Result<TrainReport> {
    let cnn_lr = config.cnn_lr.unwrap_or(config.lr);
    let (cnn_params, rest): (Vec<_>, Vec<_>) = params
        .named_parameters()
        .into_iter()
        .partition(|(n, _)| n.starts_with("swcnn."));
    let mut opt = Adam::new(
        vec![(cnn_params, cnn_lr), (rest, config.lr)],
        AdamConfig { weight_decay: config.weight_decay, ..Default::default() },
    );
    train_loop(
        config,
        train,
        val,
        |g, x, w| {
            let data = x.to_vec();
            let logits = params.forward(g, &data, w.n_channels, w.t, Mode::Train)?;
            let loss = g.softmax_cross_entropy(&logits, w.locus_label)?;
            let ok = argmax2(&logits.to_vec()) == w.locus_label;
            Ok((loss, ok))
        },
        |x, w| {
            let g = Graph::inference();
            let data = x.to_vec();
            let logits = params.forward(&g, &data, w.n_channels, w.t, Mode::Eval)?;
            Ok(argmax2(&logits.to_vec()) == w.locus_label)
        },
        &mut opt,
        || params.export_tensors(),
    )
}
