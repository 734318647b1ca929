//! Adam and the epoch/minibatch training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, HybridModel};
use crate::sequencing::TrainingExample;

/// Per-parameter moment buffers of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments for parameter groups of the given lengths.
    pub fn new(lengths: &[usize], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_model(model: &HybridModel, cfg: &TrainConfig) -> Self {
        let lengths: Vec<usize> = model.tensors().iter().map(|m| m.data().len()).collect();
        Self::new(&lengths, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }
}

/// One bias-corrected Adam update over parameter groups.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter groups, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[i].len() || g.len() != p.len() {
            return Err(Error::ShapeMismatch(format!("parameter group {i}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Adam update of every model tensor.
pub fn adam_step_model(
    state: &mut AdamState,
    model: &mut HybridModel,
    grads: &HybridModel,
) -> Result<()> {
    let mut params: Vec<&mut [f64]> = model
        .tensors_mut()
        .into_iter()
        .map(|m| m.data_mut())
        .collect();
    let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|m| m.data()).collect();
    adam_step(state, &mut params, &grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop: Option<usize>,
    /// Largest number of examples pushed through forward/backward at once;
    /// gradients of the pieces are summed, so this only bounds memory.
    pub micro_batch: usize,
    /// Train against the z-scored target and fold the scaling back into the
    /// output layer afterwards.
    pub standardize_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 512,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            early_stop: None,
            micro_batch: 64,
            standardize_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch sizes must be positive".into(),
            ));
        }
        let open = |b: f64| b > 0.0 && b < 1.0;
        if !open(self.beta1) || !open(self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("lr and eps must be positive".into()));
        }
        if self.early_stop == Some(0) {
            return Err(Error::InvalidConfig(
                "early-stop patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch, in squared target units.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HybridModel,
    pub history: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
}

/// Inference-mode predictions, in example order.
pub fn predict(
    model: &HybridModel,
    examples: &[TrainingExample],
    chunk: usize,
) -> Result<Vec<f64>> {
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    predict_refs(model, &refs, chunk)
}

fn predict_refs(
    model: &HybridModel,
    examples: &[&TrainingExample],
    chunk: usize,
) -> Result<Vec<f64>> {
    // inference never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(examples.len());
    for part in examples.chunks(chunk.max(1)) {
        let batch = Batch::from_examples(part)?;
        let (preds, _) = model.forward_batch(&batch, false, &mut rng)?;
        out.extend(preds);
    }
    Ok(out)
}

fn mse_against(pred: &[f64], examples: &[&TrainingExample], shift: f64, scale: f64) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(examples)
        .map(|(p, e)| {
            let r = p - (e.target - shift) / scale;
            r * r
        })
        .sum::<f64>()
        / n
}

/// Rescales the linear output layer so the model predicts `scale·y + shift`.
fn fold_target_scaling(model: &mut HybridModel, shift: f64, scale: f64) {
    let out = model.head.last_mut().expect("head has an output layer");
    for v in out.w.data_mut() {
        *v *= scale;
    }
    for v in out.b.data_mut() {
        *v = *v * scale + shift;
    }
}

/// Seeded minibatch Adam training that returns the parameters with the best
/// validation MSE (the last epoch when `val` is empty).
pub fn train(
    mut model: HybridModel,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (shift, scale) = if cfg.standardize_target {
        let n = train_set.len() as f64;
        let mean = train_set.iter().map(|e| e.target).sum::<f64>() / n;
        let var = train_set
            .iter()
            .map(|e| (e.target - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::for_model(&model, cfg);
    let val: Vec<&TrainingExample> = val_set.iter().collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, HybridModel)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let n = batch_idx.len() as f64;
            let mut grads: Option<HybridModel> = None;
            for part in batch_idx.chunks(cfg.micro_batch) {
                let examples: Vec<&TrainingExample> = part.iter().map(|&i| &train_set[i]).collect();
                let batch = Batch::from_examples(&examples)?;
                let (pred, cache) = model.forward_batch(&batch, true, &mut rng)?;
                // gradient of the mean over the whole minibatch
                let mut d_pred = Vec::with_capacity(pred.len());
                for (p, e) in pred.iter().zip(&examples) {
                    let r = p - (e.target - shift) / scale;
                    loss_sum += r * r;
                    d_pred.push(2.0 * r / n);
                }
                let g = model.backward(cache.as_ref(), &d_pred)?;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.accumulate(&g),
                }
            }
            let grads = grads.expect("non-empty minibatch");
            adam_step_model(&mut adam, &mut model, &grads)?;
        }
        let train_mse = loss_sum / train_set.len() as f64 * scale * scale;
        if !train_mse.is_finite() || !model.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        let val_mse = if val.is_empty() {
            None
        } else {
            let pred = predict_refs(&model, &val, cfg.micro_batch)?;
            let mse = mse_against(&pred, &val, shift, scale) * scale * scale;
            if !mse.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite validation loss at epoch {epoch}"
                )));
            }
            Some(mse)
        };
        log::info!(
            "epoch {epoch:>3}  train_mse {train_mse:.5}  val_mse {}",
            val_mse.map_or("-".to_string(), |v| format!("{v:.5}"))
        );
        history.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });

        let score = val_mse.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score >= *b && val_mse.is_some() => since_best += 1,
            _ => {
                best = Some((score, epoch, model.clone()));
                since_best = 0;
            }
        }
        if matches!(cfg.early_stop, Some(p) if since_best >= p) {
            break;
        }
    }

    let (_, best_epoch, mut best_model) = best.expect("at least one epoch ran");
    if cfg.standardize_target {
        fold_target_scaling(&mut best_model, shift, scale);
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
    })
}

/// Writes the loss history as `epoch,train_mse,val_mse`.
pub fn write_training_log<W: Write>(w: W, history: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_mse", "val_mse"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for h in history {
        out.write_record([
            h.epoch.to_string(),
            h.train_mse.to_string(),
            h.val_mse.map_or(String::new(), |v| v.to_string()),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
