//! The incubated classifier: a softmax probe over frozen text embeddings.
//!
//! Training is mini-batch gradient descent on mean cross-entropy with L2
//! weight decay on the non-bias weights and a cosine-decayed learning rate.
//! Everything is single-threaded and a pure function of the examples and the
//! seed.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::model::{validate_instruction, IncubationDataset, Instruction};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training examples for label {0:?}")]
    MissingLabelExamples(String),
    #[error("training diverged (non-finite loss at step {0})")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("classifier was trained with embedder {expected:?} but the gateway serves {actual:?}")]
    EmbedderMismatch { expected: String, actual: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("artifact version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt classifier artifact: {0}")]
    CorruptArtifact(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Row-major `n_labels x (dim + 1)` weights; the last column is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeWeights {
    pub n_labels: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ProbeWeights {
    pub fn zeros(n_labels: usize, dim: usize) -> Self {
        Self {
            n_labels,
            dim,
            values: vec![0.0; n_labels * (dim + 1)],
        }
    }

    pub fn row(&self, label: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.values[label * w..(label + 1) * w]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.n_labels)
            .map(|j| {
                let row = self.row(j);
                row[..self.dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + row[self.dim]
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over `(xs, ys)` plus `weight_decay / 2 * |W|^2` on the
/// non-bias weights, and its gradient with respect to every weight.
pub fn loss_and_gradient(
    weights: &ProbeWeights,
    xs: &[&[f64]],
    ys: &[usize],
    weight_decay: f64,
) -> (f64, Vec<f64>) {
    let dim = weights.dim;
    let width = dim + 1;
    let m = xs.len() as f64;
    let mut grad = vec![0.0; weights.values.len()];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = weights.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - logits[y];
        for (j, z) in logits.iter().enumerate() {
            let coeff = ((z - lse).exp() - if j == y { 1.0 } else { 0.0 }) / m;
            let row = &mut grad[j * width..(j + 1) * width];
            row[..dim]
                .iter_mut()
                .zip(x.iter())
                .for_each(|(g, v)| *g += coeff * v);
            row[dim] += coeff;
        }
    }
    loss /= m;
    if weight_decay > 0.0 {
        for j in 0..weights.n_labels {
            for k in 0..dim {
                let idx = j * width + k;
                let w = weights.values[idx];
                loss += 0.5 * weight_decay * w * w;
                grad[idx] += weight_decay * w;
            }
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub final_train_loss: f64,
    /// `None` when the holdout split is empty.
    pub holdout_accuracy: Option<f64>,
    pub dataset_size: usize,
    pub train_size: usize,
    pub holdout_size: usize,
    /// Full training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncubatedClassifier {
    pub instruction: Instruction,
    pub weights: ProbeWeights,
    pub embedder_fingerprint: String,
    pub metadata: TrainingMetadata,
}

impl IncubatedClassifier {
    /// Label distribution for an already-embedded text.
    pub fn predict_embedding(&self, x: &[f64]) -> Vec<f64> {
        self.weights.probabilities(x)
    }

    pub fn check_embedder(&self, gateway: &Gateway) -> Result<(), PredictError> {
        let actual = gateway.embedder_fingerprint()?;
        if actual != self.embedder_fingerprint {
            return Err(PredictError::EmbedderMismatch {
                expected: self.embedder_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }
}

/// Probability per label (canonical order) for `text`.
pub fn predict(
    clf: &IncubatedClassifier,
    text: &str,
    gateway: &Gateway,
) -> Result<Vec<f64>, PredictError> {
    clf.check_embedder(gateway)?;
    let e = gateway.embed_one(text)?;
    Ok(clf.predict_embedding(e.values()))
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Embeds every distinct text once and trains on the flattened dataset.
pub fn train_classifier(
    dataset: &IncubationDataset,
    cfg: &TrainConfig,
    gateway: &Gateway,
) -> Result<IncubatedClassifier, TrainError> {
    cfg.validate()?;
    let instruction = dataset.instruction();
    let counts = dataset.label_counts();
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::MissingLabelExamples(
            instruction.labels()[l].clone(),
        ));
    }
    let (xs, ys) = embed_examples(dataset, gateway)?;
    train_on_features(instruction, &xs, &ys, cfg, gateway.embedder_fingerprint()?)
}

/// Embeddings and label indices for the dataset's examples, sorted by
/// `(text, label)`. Each distinct text is embedded once.
pub fn embed_examples(
    dataset: &IncubationDataset,
    gateway: &Gateway,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), GatewayError> {
    let mut examples = dataset.examples().to_vec();
    examples.sort();
    let mut texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    texts.dedup();
    let vectors = gateway.embed(&texts)?;
    Ok(examples
        .iter()
        .map(|e| {
            let i = texts.binary_search(&e.text).expect("embedded above");
            (vectors[i].values().to_vec(), e.label)
        })
        .unzip())
}

/// Stratified holdout split: for each label, a seeded shuffle of its example
/// indices puts the first `floor(fraction * count)` in the holdout. Returns
/// `(train, holdout)`, each ascending.
pub fn stratified_split(
    ys: &[usize],
    n_labels: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for label in 0..n_labels {
        let mut idx: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == label).collect();
        idx.shuffle(&mut rng);
        let h = (fraction * idx.len() as f64).floor() as usize;
        holdout.extend_from_slice(&idx[..h]);
        train.extend_from_slice(&idx[h..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

/// Trains on pre-computed features. Examples are expected in a canonical
/// order; the split and per-epoch shuffles depend only on `cfg.seed`.
pub fn train_on_features(
    instruction: &Instruction,
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &TrainConfig,
    embedder_fingerprint: String,
) -> Result<IncubatedClassifier, TrainError> {
    cfg.validate()?;
    let n = instruction.n_labels();
    let dim = xs.first().map(Vec::len).unwrap_or(0);
    if let Some(label) = (0..n).find(|l| !ys.contains(l)) {
        return Err(TrainError::MissingLabelExamples(
            instruction.labels()[label].clone(),
        ));
    }
    let (train, holdout) = stratified_split(ys, n, cfg.holdout_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut weights = ProbeWeights::zeros(n, dim);
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let train_x: Vec<&[f64]> = train.iter().map(|&i| xs[i].as_slice()).collect();
    let train_y: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| train_x[i]).collect();
            let by: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (loss, grad) = loss_and_gradient(&weights, &bx, &by, cfg.weight_decay);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss(step));
            }
            let lr =
                cfg.learning_rate * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos());
            weights
                .values
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= lr * g);
            step += 1;
        }
        let (loss, _) = loss_and_gradient(&weights, &train_x, &train_y, cfg.weight_decay);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss(step));
        }
        epoch_losses.push(loss);
    }

    let holdout_accuracy = (!holdout.is_empty()).then(|| {
        let correct = holdout
            .iter()
            .filter(|&&i| argmax(&weights.probabilities(&xs[i])) == ys[i])
            .count();
        correct as f64 / holdout.len() as f64
    });
    Ok(IncubatedClassifier {
        instruction: instruction.clone(),
        weights,
        embedder_fingerprint,
        metadata: TrainingMetadata {
            final_train_loss: *epoch_losses.last().expect("epochs >= 1"),
            holdout_accuracy,
            dataset_size: ys.len(),
            train_size: train.len(),
            holdout_size: holdout.len(),
            epoch_losses,
            config: *cfg,
        },
    })
}

const ARTIFACT_FORMAT: &str = "incubator-classifier";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ArtifactOut<'a> {
    format: &'a str,
    version: u32,
    sha256: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct ArtifactHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ArtifactIn<'a> {
    sha256: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes to the single-file artifact format.
pub fn classifier_to_string(clf: &IncubatedClassifier) -> String {
    let payload = serde_json::to_string(clf).expect("classifier serializes");
    let raw = RawValue::from_string(payload).expect("valid json");
    let out = ArtifactOut {
        format: ARTIFACT_FORMAT,
        version: ARTIFACT_VERSION,
        sha256: sha_hex(raw.get().as_bytes()),
        payload: &raw,
    };
    serde_json::to_string(&out).expect("artifact serializes") + "\n"
}

pub fn classifier_from_str(text: &str) -> Result<IncubatedClassifier, ArtifactError> {
    let corrupt = |m: String| ArtifactError::CorruptArtifact(m);
    let header: ArtifactHeader =
        serde_json::from_str(text).map_err(|e| corrupt(format!("unreadable: {e}")))?;
    if header.format != ARTIFACT_FORMAT {
        return Err(corrupt(format!("unexpected format {:?}", header.format)));
    }
    if header.version != ARTIFACT_VERSION {
        return Err(ArtifactError::VersionMismatch {
            found: header.version,
            supported: ARTIFACT_VERSION,
        });
    }
    let body: ArtifactIn<'_> =
        serde_json::from_str(text).map_err(|e| corrupt(format!("unreadable: {e}")))?;
    let actual = sha_hex(body.payload.get().as_bytes());
    if actual != body.sha256 {
        return Err(corrupt(format!(
            "checksum {actual} does not match {}",
            body.sha256
        )));
    }
    let clf: IncubatedClassifier = serde_json::from_str(body.payload.get())
        .map_err(|e| corrupt(format!("bad payload: {e}")))?;
    let revalidated = validate_instruction(clf.instruction.demand(), clf.instruction.labels())
        .map_err(|e| corrupt(format!("bad instruction: {e}")))?;
    let w = &clf.weights;
    if !revalidated.same_task(&clf.instruction)
        || w.n_labels != clf.instruction.n_labels()
        || w.values.len() != w.n_labels * (w.dim + 1)
    {
        return Err(corrupt("inconsistent shapes".into()));
    }
    Ok(clf)
}

pub fn save_classifier(clf: &IncubatedClassifier, path: &Path) -> Result<(), ArtifactError> {
    fs::write(path, classifier_to_string(clf))?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<IncubatedClassifier, ArtifactError> {
    classifier_from_str(&fs::read_to_string(path)?)
}
