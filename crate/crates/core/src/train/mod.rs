//! Weighted cross-entropy, Adam with global-norm clipping, and the epoch
//! loop with validation-based model selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedConversation, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{accuracy, adjust_predictions, micro_f1_emotional, EVAL_BATCH};
use crate::model::{Batch, Model};
use crate::seeds;
use crate::shift::{class_weights, resample, CorrectionSpec, Method, PredictionVector};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub class_weights: [f64; NUM_CLASSES],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            grad_clip_norm: 3.0,
            max_epochs: 50,
            patience: 10,
            class_weights: [1.0; NUM_CLASSES],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::config("grad_clip_norm must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "batch_size and max_epochs must be at least 1",
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::config(format!(
                "invalid class weights {:?}",
                self.class_weights
            )));
        }
        Ok(())
    }
}

/// `-(1/N) sum_i w[y_i] ln p(y_i | x_i)` on probability rows. Returns the
/// loss and how many probabilities had to be clamped at [`PROB_FLOOR`].
pub fn weighted_cross_entropy(
    probs: &[[f64; NUM_CLASSES]],
    labels: &[usize],
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, usize)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::contract(
            "weighted cross entropy needs one label per row",
        ));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (row, &y) in probs.iter().zip(labels) {
        let p = *row.get(y).ok_or(Error::Index {
            what: "class",
            index: y,
            size: NUM_CLASSES,
        })?;
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total += weights[y] * p.max(PROB_FLOOR).ln();
    }
    Ok((-total / probs.len() as f64, clamped))
}

/// The same loss built on the graph from logits via log-softmax. The
/// second value counts clamped terms.
pub fn weighted_cross_entropy_logits(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    weights: &[f64; NUM_CLASSES],
) -> Result<(Var, usize)> {
    let logp = g.log_softmax(logits)?;
    let picked = g.pick(logp, labels)?;
    let floor = PROB_FLOOR.ln();
    let clamped = g
        .value(picked)
        .data()
        .iter()
        .filter(|&&v| v < floor)
        .count();
    let picked = g.clamp_min(picked, floor)?;
    let w = labels.iter().map(|&y| weights[y]).collect();
    let weighted = g.mul_mask(picked, w)?;
    let total = g.sum(weighted)?;
    Ok((g.scale(total, -1.0 / labels.len() as f64)?, clamped))
}

/// Scales every gradient by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.ids().collect();
    let norm = ids
        .iter()
        .map(|&id| store.grad(id).data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for id in ids {
            for g in store.grad_mut(id).data_mut() {
                *g *= factor;
            }
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update from the store's gradient buffers.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::contract(
                "optimizer state does not match the parameters",
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let k = id.index();
            if self.m[k].shape() != store.value(id).shape() {
                return Err(Error::contract(format!(
                    "optimizer shape mismatch for {}",
                    store.name(id)
                )));
            }
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_micro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Probabilities clamped in the loss over the whole run.
    pub clamped: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,val_micro_f1\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.val_micro_f1
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub history: History,
    /// Validation micro-F1 of the kept epoch.
    pub best_val_f1: f64,
}

/// Loss weights and training set implied by a correction. Resampling
/// rewrites the set (seeded from `spec.seed`); cost-sensitive learning sets
/// the weights to `p_s / p_r`; the other methods change nothing here.
pub fn prepare(
    train: &[EncodedConversation],
    spec: &CorrectionSpec,
    base_weights: [f64; NUM_CLASSES],
) -> Result<(Vec<EncodedConversation>, [f64; NUM_CLASSES])> {
    let set = match spec.method.resample_mode() {
        Some(mode) => resample(
            train,
            &spec.p_s,
            mode,
            seeds::derive_named(spec.seed, "resample"),
        )?,
        None => train.to_vec(),
    };
    let weights = if spec.method == Method::CostSensitive {
        class_weights(&spec.p_r, &spec.p_s)?
    } else {
        base_weights
    };
    Ok((set, weights))
}

/// Trains with `correction` applied: see [`prepare`] for the training-side
/// effects; thresholding is applied to validation predictions during model
/// selection, as it would be at inference.
pub fn train(
    model: Model,
    train_set: &[EncodedConversation],
    val_set: &[EncodedConversation],
    config: &TrainConfig,
    correction: &CorrectionSpec,
) -> Result<Trained> {
    let (set, weights) = prepare(train_set, correction, config.class_weights)?;
    fit(model, &set, val_set, config, &weights, correction)
}

/// Trains on `train_set` as given with loss `weights`. Only the
/// inference-side part of `correction` is used (for validation scoring).
pub fn fit(
    model: Model,
    train_set: &[EncodedConversation],
    val_set: &[EncodedConversation],
    config: &TrainConfig,
    weights: &[f64; NUM_CLASSES],
    correction: &CorrectionSpec,
) -> Result<Trained> {
    let mut out = fit_selecting(
        model,
        train_set,
        val_set,
        config,
        weights,
        std::slice::from_ref(correction),
    )?;
    Ok(out.remove(0))
}

/// One training run scored under several inference-side corrections; each
/// selector keeps its own best epoch. Methods that differ only at inference
/// (baseline and thresholding) share a trajectory this way.
pub fn fit_selecting(
    mut model: Model,
    train_set: &[EncodedConversation],
    val_set: &[EncodedConversation],
    config: &TrainConfig,
    weights: &[f64; NUM_CLASSES],
    selectors: &[CorrectionSpec],
) -> Result<Vec<Trained>> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract(
            "training and validation sets must be non-empty",
        ));
    }
    if selectors.is_empty() {
        return Err(Error::contract("no model-selection rule given"));
    }
    let labels = |set: &[EncodedConversation]| -> Result<Vec<usize>> {
        set.iter()
            .map(|e| e.label)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::contract("training needs labelled data"))
    };
    let train_labels = labels(train_set)?;
    let val_labels = labels(val_set)?;

    struct Track {
        history: History,
        best: Option<(f64, ParamStore)>,
        since_best: usize,
    }
    let mut tracks: Vec<Track> = selectors
        .iter()
        .map(|_| Track {
            history: History::default(),
            best: None,
            since_best: 0,
        })
        .collect();
    let mut adam = AdamState::new(model.params());
    let mut clamped_total = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = seeds::derive(config.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive_named(
            epoch_seed, "shuffle",
        )));
        let mut dropout = ChaCha8Rng::seed_from_u64(seeds::derive_named(epoch_seed, "dropout"));
        let (mut loss_sum, mut hits) = (0.0, 0);

        for chunk in order.chunks(config.batch_size) {
            let examples: Vec<&EncodedConversation> =
                chunk.iter().map(|&i| &train_set[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let batch = Batch::new(&examples)?;
            let mut g = Graph::new();
            let logits = model.logits(&mut g, model.params(), &batch, true, Some(&mut dropout))?;
            for (row, &y) in g.value(logits).data().chunks(NUM_CLASSES).zip(&ys) {
                hits += usize::from(crate::shift::argmax(row) == y);
            }
            let (loss, clamped) = weighted_cross_entropy_logits(&mut g, logits, &ys, weights)?;
            clamped_total += clamped;
            loss_sum += g.value(loss).item() * ys.len() as f64;
            let grads = g.backward(loss)?;
            let store = model.params_mut();
            store.zero_grad();
            grads.accumulate_into(store);
            clip_gradients(store, config.grad_clip_norm);
            adam.step(store, config.learning_rate)?;
        }

        let raw = model.predict(val_set, EVAL_BATCH)?;
        let mut all_stopped = true;
        for (track, selector) in tracks.iter_mut().zip(selectors) {
            if config.patience > 0 && track.since_best >= config.patience {
                continue;
            }
            let preds = predicted_classes(&raw, selector)?;
            let val_f1 = micro_f1_emotional(&preds, &val_labels)?.f1;
            track.history.epochs.push(EpochRecord {
                epoch,
                train_loss: loss_sum / train_set.len() as f64,
                train_acc: hits as f64 / train_set.len() as f64,
                val_acc: accuracy(&preds, &val_labels)?,
                val_micro_f1: val_f1,
            });
            track.history.clamped = clamped_total;
            if track.best.as_ref().map_or(true, |(f, _)| val_f1 > *f) {
                track.best = Some((val_f1, model.params().clone()));
                track.history.best_epoch = epoch;
                track.since_best = 0;
            } else {
                track.since_best += 1;
            }
            if config.patience == 0 || track.since_best < config.patience {
                all_stopped = false;
            }
        }
        if all_stopped {
            break;
        }
    }

    Ok(tracks
        .into_iter()
        .map(|track| {
            let (best_val_f1, params) = track.best.expect("at least one epoch ran");
            let mut kept = model.clone();
            *kept.params_mut() = params;
            Trained {
                model: kept,
                history: track.history,
                best_val_f1,
            }
        })
        .collect())
}

fn predicted_classes(raw: &[PredictionVector], correction: &CorrectionSpec) -> Result<Vec<usize>> {
    Ok(adjust_predictions(raw, correction)?
        .iter()
        .map(|p| p.predicted_class)
        .collect())
}
