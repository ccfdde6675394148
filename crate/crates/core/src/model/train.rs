//! Losses, the momentum optimizer and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::concept::{decode, ConceptModel, ModelError, SlotCache};
use super::noise::NoiseModel;
use super::tape::{Gradients, Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::corpus::{CorpusRecord, LabelIndices, LabelSource, Post};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("post {post_id:?}: {message}")]
    Label { post_id: String, message: String },
    #[error("post {0:?} carries no labels")]
    Unlabeled(String),
    #[error("the clean training set is empty")]
    EmptyCleanSet,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Scale of the weak-label loss terms.
    pub weak_weight: f64,
    /// Weight of the `-sum_k trace(T_k) / C_k` regularizer.
    pub trace_weight: f64,
    /// Route weak labels through the transition matrices; when false weak
    /// labels are scored like clean ones.
    pub noise_layer: bool,
    /// Learning rate for the transition scores; defaults to `learning_rate`.
    pub noise_learning_rate: Option<f64>,
    /// Initial diagonal mass of every transition row.
    pub initial_self_mass: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// L2 penalty on the model parameters (not the transition scores),
    /// added to the gradient after clipping.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            weak_weight: 1.0,
            trace_weight: 0.0,
            noise_layer: true,
            noise_learning_rate: None,
            initial_self_mass: 0.9,
            clip_norm: Some(5.0),
            weight_decay: 0.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weak_weight.is_finite() && self.weak_weight >= 0.0) {
            return bad("weak_weight must be non-negative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.initial_self_mass > 0.0 && self.initial_self_mass < 1.0) {
            return bad("initial_self_mass must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// A post with labels resolved to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub post: Post,
    pub labels: LabelIndices,
}

impl TrainingExample {
    pub fn from_record(record: &CorpusRecord, model: &ConceptModel) -> Result<Self, TrainError> {
        let labels = record
            .labels
            .as_ref()
            .ok_or_else(|| TrainError::Unlabeled(record.post.post_id.clone()))?;
        let labels = labels
            .resolve(model.vocab())
            .map_err(|message| TrainError::Label {
                post_id: record.post.post_id.clone(),
                message,
            })?;
        model.check_post(&record.post)?;
        Ok(Self {
            post: record.post.clone(),
            labels,
        })
    }

    pub fn from_records(
        records: &[CorpusRecord],
        model: &ConceptModel,
    ) -> Result<Vec<Self>, TrainError> {
        records
            .iter()
            .map(|r| Self::from_record(r, model))
            .collect()
    }
}

/// Records the batch loss on `tape`:
///
/// `mean(clean CE) + weak_weight * mean(weak CE) - trace_weight * sum_k trace(T_k) / C_k`
///
/// where each part is a mean over posts and slots. Clean terms score the
/// model distribution; weak terms (label source `weak`) score it after the
/// transition matrix of the task when `noise_layer` is on.
pub fn batch_loss(
    tape: &mut Tape,
    model: &ConceptModel,
    noise: &NoiseModel,
    batch: &[&TrainingExample],
    cfg: &TrainConfig,
) -> Result<Var, TrainError> {
    let mut cache = SlotCache::default();
    let mut transitions: Vec<Option<Var>> = vec![None; noise.task_count()];
    let mut clean_terms = Vec::new();
    let mut weak_terms = Vec::new();

    for ex in batch {
        let weak = ex.labels.source == LabelSource::Weak;
        if weak && cfg.weak_weight == 0.0 {
            continue;
        }
        let graph = model.graph(tape, &ex.post, &mut cache)?;
        let mut score = |tape: &mut Tape, p: Var, task: usize, label: usize| {
            if weak && cfg.noise_layer {
                let t = *transitions[task].get_or_insert_with(|| noise.transition_node(tape, task));
                let noisy = tape.vec_mat(p, t);
                weak_terms.push(tape.neg_log(noisy, label));
            } else {
                let term = tape.neg_log(p, label);
                if weak {
                    weak_terms.push(term);
                } else {
                    clean_terms.push(term);
                }
            }
        };
        score(tape, graph.occasion, 0, ex.labels.occasion);
        for (slots, labels) in graph.slots.iter().zip(&ex.labels.garments) {
            for (j, (&p, &label)) in slots.iter().zip(labels).enumerate() {
                score(tape, p, j + 1, label);
            }
        }
    }

    let mut parts = Vec::new();
    if !clean_terms.is_empty() {
        let w = 1.0 / clean_terms.len() as f64;
        parts.extend(clean_terms.into_iter().map(|t| (t, w)));
    }
    if !weak_terms.is_empty() {
        let w = cfg.weak_weight / weak_terms.len() as f64;
        parts.extend(weak_terms.into_iter().map(|t| (t, w)));
    }
    if cfg.trace_weight != 0.0 {
        for task in 0..noise.task_count() {
            let t = *transitions[task].get_or_insert_with(|| noise.transition_node(tape, task));
            let tr = tape.trace_mean(t);
            parts.push((tr, -cfg.trace_weight));
        }
    }
    Ok(tape.weighted_sum(parts))
}

/// Loss value of one labeled batch.
pub fn loss(
    model: &ConceptModel,
    noise: &NoiseModel,
    batch: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut tape = Tape::new(vec![model.params(), noise.params()]);
    let l = batch_loss(&mut tape, model, noise, &refs, cfg)?;
    Ok(tape.scalar(l))
}

/// Loss and gradients for both parameter groups.
pub fn loss_and_gradients(
    model: &ConceptModel,
    noise: &NoiseModel,
    batch: &[&TrainingExample],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients), TrainError> {
    let mut tape = Tape::new(vec![model.params(), noise.params()]);
    let l = batch_loss(&mut tape, model, noise, batch, cfg)?;
    let value = tape.scalar(l);
    Ok((value, tape.backward(l)))
}

/// Gradient descent with classical momentum: `v = mu v + g + wd p; p -= lr v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    momentum: f64,
    velocity: [Vec<Tensor>; 2],
}

impl Momentum {
    pub fn new(model: &ConceptModel, noise: &NoiseModel, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: [model.params().zeros_like(), noise.params().zeros_like()],
        }
    }

    fn apply(
        &mut self,
        group: usize,
        store: &mut ParamStore,
        grads: &[Tensor],
        lr: f64,
        decay: f64,
    ) {
        for ((p, v), g) in store
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.velocity[group])
            .zip(grads)
        {
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi + decay * *pi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// One update on a batch; returns the loss before the update.
pub fn backward_and_step(
    model: &mut ConceptModel,
    noise: &mut NoiseModel,
    opt: &mut Momentum,
    batch: &[&TrainingExample],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let (value, mut grads) = loss_and_gradients(model, noise, batch, cfg)?;
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch: 0,
            step: 0,
            loss: value,
        });
    }
    if let Some(clip) = cfg.clip_norm {
        let norm = grads.squared_norm().sqrt();
        if norm > clip {
            grads.scale(clip / norm);
        }
    }
    opt.apply(
        0,
        model.params_mut(),
        &grads.groups[0],
        cfg.learning_rate,
        cfg.weight_decay,
    );
    opt.apply(
        1,
        noise.params_mut(),
        &grads.groups[1],
        cfg.noise_rate(),
        0.0,
    );
    Ok(value)
}

/// Correct / total counts per task (occasion, category, attributes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl TaskAccuracy {
    pub fn rates(&self) -> Vec<f64> {
        self.correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
            .collect()
    }

    pub fn mean_rate(&self) -> f64 {
        let r = self.rates();
        r.iter().sum::<f64>() / r.len() as f64
    }
}

pub fn evaluate(
    model: &ConceptModel,
    examples: &[TrainingExample],
) -> Result<TaskAccuracy, TrainError> {
    let tasks = model.vocab().task_sizes().len();
    let mut acc = TaskAccuracy {
        correct: vec![0; tasks],
        total: vec![0; tasks],
    };
    for ex in examples {
        let hard = decode(&model.forward(&ex.post)?);
        acc.total[0] += 1;
        acc.correct[0] += usize::from(hard.occasion == ex.labels.occasion);
        for (pred, truth) in hard.garments.iter().zip(&ex.labels.garments) {
            for (j, (p, t)) in pred.iter().zip(truth).enumerate() {
                acc.total[j + 1] += 1;
                acc.correct[j + 1] += usize::from(p == t);
            }
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Held-out accuracy per task, when an evaluation set was given.
    pub accuracy: Option<Vec<f64>>,
}

/// Trains `model` and `noise` in place.
///
/// An epoch is one pass over the clean set in batches of `batch_size`; the
/// weak set is split into the same number of batches, so each step sees one
/// clean and one weak batch and every weak post is visited once per epoch.
/// Clean and weak orders are shuffled from separate seeded streams.
pub fn train(
    model: &mut ConceptModel,
    noise: &mut NoiseModel,
    clean: &[TrainingExample],
    weak: &[TrainingExample],
    eval: Option<&[TrainingExample]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    if clean.is_empty() {
        return Err(TrainError::EmptyCleanSet);
    }
    let use_weak = !weak.is_empty() && cfg.weak_weight > 0.0;
    let mut clean_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weak_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_da7a);
    let mut clean_order: Vec<usize> = (0..clean.len()).collect();
    let mut weak_order: Vec<usize> = (0..weak.len()).collect();
    let steps = clean.len().div_ceil(cfg.batch_size);
    let weak_batch = weak.len().div_ceil(steps);
    let mut opt = Momentum::new(model, noise, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        clean_order.shuffle(&mut clean_rng);
        if use_weak {
            weak_order.shuffle(&mut weak_rng);
        }
        let mut total = 0.0;
        for step in 0..steps {
            let mut batch: Vec<&TrainingExample> = clean_order
                [step * cfg.batch_size..((step + 1) * cfg.batch_size).min(clean.len())]
                .iter()
                .map(|&i| &clean[i])
                .collect();
            if use_weak {
                let lo = (step * weak_batch).min(weak.len());
                let hi = ((step + 1) * weak_batch).min(weak.len());
                batch.extend(weak_order[lo..hi].iter().map(|&i| &weak[i]));
            }
            let value =
                backward_and_step(model, noise, &mut opt, &batch, cfg).map_err(|e| match e {
                    TrainError::NonFiniteLoss { loss, .. } => {
                        TrainError::NonFiniteLoss { epoch, step, loss }
                    }
                    other => other,
                })?;
            total += value;
        }
        let accuracy = match eval {
            Some(set) if !set.is_empty() => Some(evaluate(model, set)?.rates()),
            _ => None,
        };
        log::debug!("epoch {epoch}: loss {:.5}", total / steps as f64);
        history.push(EpochMetrics {
            epoch,
            loss: total / steps as f64,
            accuracy,
        });
    }
    Ok(history)
}
