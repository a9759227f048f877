//! Training: minibatch Adam (or plain full-batch gradient descent for
//! sanity checks), cross-entropy summed over heads, early stopping on
//! validation loss, deterministic in the classifier seed.

use super::linalg::softmax2;
use super::{
    backward, forward_cached, init_params, ClassifierConfig, ClassifierError, TrainedClassifier,
    TrainingLogEntry,
};
use crate::features::WindowRecord;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("scene `{0}` appears in both train and validation splits")]
    SceneLeak(String),
    #[error("example has {got} labels, model has {expected} heads")]
    LabelHeadMismatch { got: usize, expected: usize },
    #[error("example shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// One training example: a feature window plus one label per head.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    /// Per-head labels; 1 = crossing.
    pub labels: Vec<u8>,
    /// Scene key for split-leak checks (None when unknown).
    pub scene: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainDataset {
    pub examples: Vec<TrainExample>,
}

impl TrainDataset {
    pub fn from_records(records: &[WindowRecord]) -> Self {
        TrainDataset {
            examples: records
                .iter()
                .map(|r| TrainExample {
                    x: r.x.clone(),
                    mask: r.mask.clone(),
                    labels: vec![r.y],
                    scene: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn scene_keys(&self) -> BTreeSet<&str> {
        self.examples
            .iter()
            .filter_map(|e| e.scene.as_deref())
            .collect()
    }

    /// Fraction of positive (crossing) labels, over all heads.
    pub fn positive_fraction(&self) -> f64 {
        let mut pos = 0usize;
        let mut total = 0usize;
        for e in &self.examples {
            pos += e.labels.iter().filter(|y| **y == 1).count();
            total += e.labels.len();
        }
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
    Adam,
    /// Plain gradient descent (sanity mode; pair with full-batch sizing).
    PlainGd,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            optimizer: Optimizer::Adam,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Cross-entropy (summed over heads) and logit gradients for one example.
fn example_loss(
    logits: &[[f64; 2]],
    labels: &[u8],
) -> (f64, Vec<[f64; 2]>, usize) {
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(logits.len());
    let mut correct = 0usize;
    for (z, y) in logits.iter().zip(labels) {
        // Class index 0 is crossing; label 1 = crossing.
        let target = if *y == 1 { 0usize } else { 1usize };
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[target];
        let p = softmax2(*z);
        let mut dz = [p[0], p[1]];
        dz[target] -= 1.0;
        dlogits.push(dz);
        let pred = if p[0] > p[1] { 0 } else { 1 };
        if pred == target {
            correct += 1;
        }
    }
    (loss, dlogits, correct)
}

fn check_example(cfg: &ClassifierConfig, e: &TrainExample) -> Result<(), TrainError> {
    if e.labels.len() != cfg.head_count() {
        return Err(TrainError::LabelHeadMismatch {
            got: e.labels.len(),
            expected: cfg.head_count(),
        });
    }
    if e.x.len() != cfg.context_slots || e.mask.len() != cfg.context_slots {
        return Err(TrainError::ShapeMismatch(format!(
            "window has {} slots, config expects {}",
            e.x.len(),
            cfg.context_slots
        )));
    }
    for v in &e.x {
        if v.len() != cfg.input_dim {
            return Err(TrainError::ShapeMismatch(format!(
                "feature dim {} != input_dim {}",
                v.len(),
                cfg.input_dim
            )));
        }
    }
    Ok(())
}

/// Mean loss and accuracy of fixed parameters over a dataset.
pub fn evaluate(
    cfg: &ClassifierConfig,
    params: &[f64],
    data: &TrainDataset,
) -> Result<(f64, f64), TrainError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for e in &data.examples {
        let (logits, _) = forward_cached(cfg, params, &e.x, &e.mask)?;
        let (l, _, c) = example_loss(&logits, &e.labels);
        loss += l;
        correct += c;
        total += e.labels.len();
    }
    Ok((loss / data.len() as f64, correct as f64 / total as f64))
}

/// Trains a classifier; deterministic given (seed, data, config). Returns
/// the parameters of the best-validation epoch.
pub fn train(
    cfg: &ClassifierConfig,
    tcfg: &TrainConfig,
    train_data: &TrainDataset,
    val_data: &TrainDataset,
) -> Result<TrainedClassifier, TrainError> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_data.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    for e in train_data.examples.iter().chain(&val_data.examples) {
        check_example(cfg, e)?;
    }
    if let Some(leak) = train_data
        .scene_keys()
        .intersection(&val_data.scene_keys())
        .next()
    {
        return Err(TrainError::SceneLeak(leak.to_string()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(cfg, &mut rng);
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];

    let n = train_data.len();
    let batch_size = match tcfg.optimizer {
        Optimizer::PlainGd => n,
        Optimizer::Adam => tcfg.batch_size.max(1),
    };

    let mut indices: Vec<usize> = (0..n).collect();
    let mut log: Vec<TrainingLogEntry> = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale_epochs = 0usize;

    for epoch in 0..tcfg.max_epochs {
        // Deterministic Fisher-Yates shuffle from the training RNG stream.
        if tcfg.optimizer == Optimizer::Adam {
            for i in (1..n).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                indices.swap(i, j);
            }
        }

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_heads = 0usize;
        for batch in indices.chunks(batch_size) {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let e = &train_data.examples[idx];
                let (logits, cache) = forward_cached(cfg, &params, &e.x, &e.mask)?;
                let (loss, mut dlogits, correct) = example_loss(&logits, &e.labels);
                batch_loss += loss;
                epoch_correct += correct;
                epoch_heads += e.labels.len();
                let inv = 1.0 / batch.len() as f64;
                for d in dlogits.iter_mut() {
                    d[0] *= inv;
                    d[1] *= inv;
                }
                backward(cfg, &params, &cache, &dlogits, &mut grad);
            }
            let mean_loss = batch_loss / batch.len() as f64;
            if !mean_loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            epoch_loss += batch_loss;
            match tcfg.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grad, tcfg.learning_rate),
                Optimizer::PlainGd => {
                    for (pv, gv) in params.iter_mut().zip(&grad) {
                        *pv -= tcfg.learning_rate * gv;
                    }
                }
            }
        }

        let (val_loss, val_accuracy) = evaluate(cfg, &params, val_data)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        log.push(TrainingLogEntry {
            epoch,
            train_loss: epoch_loss / n as f64,
            train_accuracy: epoch_correct as f64 / epoch_heads as f64,
            val_loss,
            val_accuracy,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= tcfg.patience {
                break;
            }
        }
    }

    let _ = best_epoch;
    Ok(TrainedClassifier {
        config: cfg.clone(),
        params: best_params,
        training_log: log,
    })
}
