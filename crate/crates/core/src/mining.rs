//! Corpus scoring, top-K mining and the evaluation protocols.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::incubate::{generate_dataset, GenerateError};
use crate::logic::{Expr, LogicError};
use crate::model::{IncubationDataset, Instruction, LabeledSampleSet};
use crate::probe::{
    argmax, train_classifier, IncubatedClassifier, PredictError, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0}")]
    DuplicateDocId(DocId),
    #[error("document {0} has empty text")]
    EmptyDocument(DocId),
    #[error("no judgment for document {0}")]
    MissingJudgment(DocId),
    #[error("mining result is empty")]
    EmptyResult,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("paraphrases do not share one label set")]
    MismatchedLabelSets,
    #[error("sizes must be a non-empty ascending list of positive integers")]
    InvalidSizes,
    #[error("no classifier registered for operand {0:?}")]
    UnknownOperand(String),
    #[error("{path}:{line}: {message}")]
    BadLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

/// Document identifier. All-digit ids compare numerically, everything else
/// lexicographically; numeric ids sort before the rest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub String);

impl DocId {
    fn numeric(&self) -> Option<&str> {
        let s = &self.0;
        (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())).then(|| {
            let t = s.trim_start_matches('0');
            if t.is_empty() {
                "0"
            } else {
                t
            }
        })
    }

    fn from_json(v: &Value) -> Option<DocId> {
        match v {
            Value::String(s) => Some(DocId(s.clone())),
            Value::Number(n) => Some(DocId(n.to_string())),
            _ => None,
        }
    }
}

impl Ord for DocId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a
                .len()
                .cmp(&b.len())
                .then_with(|| a.cmp(b))
                .then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for DocId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    pub source: Option<PathBuf>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, MiningError> {
        if documents.is_empty() {
            return Err(MiningError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if d.text.trim().is_empty() {
                return Err(MiningError::EmptyDocument(d.id.clone()));
            }
            if !seen.insert(&d.id) {
                return Err(MiningError::DuplicateDocId(d.id.clone()));
            }
        }
        Ok(Self {
            documents,
            source: None,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Reads JSONL (`{"id": .., "text": ..}` per line) when the first
    /// non-blank line is such an object, plain text otherwise. Plain-text ids
    /// are 1-based line numbers; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, MiningError> {
        let content = fs::read_to_string(path)?;
        let jsonl = content
            .lines()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| serde_json::from_str::<Value>(l).ok())
            .is_some_and(|v| v.get("text").is_some());
        let mut docs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if !jsonl {
                docs.push(Document {
                    id: DocId((i + 1).to_string()),
                    text: line.to_string(),
                });
                continue;
            }
            let bad = |message: &str| MiningError::BadLine {
                path: path.display().to_string(),
                line: i + 1,
                message: message.to_string(),
            };
            let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
            let id = v
                .get("id")
                .and_then(DocId::from_json)
                .ok_or_else(|| bad("missing or invalid \"id\""))?;
            let text = v
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing \"text\""))?;
            docs.push(Document {
                id,
                text: text.to_string(),
            });
        }
        let mut corpus = Self::new(docs)?;
        corpus.source = Some(path.to_path_buf());
        Ok(corpus)
    }
}

/// A registered classifier and the label whose probability is its score.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    pub classifier: &'a IncubatedClassifier,
    pub target: usize,
}

impl<'a> Scorer<'a> {
    pub fn new(classifier: &'a IncubatedClassifier, target: &str) -> Result<Self, MiningError> {
        let target = classifier
            .instruction
            .label_index(target)
            .ok_or_else(|| MiningError::UnknownLabel(target.to_string()))?;
        Ok(Self { classifier, target })
    }
}

pub enum Query<'a> {
    Classifier(Scorer<'a>),
    Logic {
        expr: &'a Expr,
        operands: &'a HashMap<String, Scorer<'a>>,
    },
}

impl Query<'_> {
    fn scorers(&self) -> Result<Vec<(&str, &Scorer<'_>)>, MiningError> {
        match self {
            Query::Classifier(s) => Ok(vec![("", s)]),
            Query::Logic { expr, operands } => expr
                .operands()
                .into_iter()
                .map(|n| {
                    operands
                        .get(n)
                        .map(|s| (n, s))
                        .ok_or_else(|| MiningError::UnknownOperand(n.to_string()))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub doc_id: DocId,
    pub score: f64,
}

/// One score in `[0, 1]` per document. The corpus is embedded once and
/// shared by every classifier the query uses.
pub fn score_corpus(
    query: &Query<'_>,
    corpus: &Corpus,
    gateway: &Gateway,
) -> Result<Vec<Scored>, MiningError> {
    if corpus.is_empty() {
        return Err(MiningError::EmptyCorpus);
    }
    let scorers = query.scorers()?;
    for (_, s) in &scorers {
        s.classifier.check_embedder(gateway)?;
    }
    let texts: Vec<String> = corpus.documents.iter().map(|d| d.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    let out = corpus
        .documents
        .iter()
        .zip(&vectors)
        .map(|(doc, e)| {
            let mut per_operand: HashMap<&str, f64> = HashMap::new();
            for (name, s) in &scorers {
                per_operand.insert(name, s.classifier.predict_embedding(e.values())[s.target]);
            }
            let score = match query {
                Query::Classifier(_) => per_operand[""],
                Query::Logic { expr, .. } => expr.eval_with(&mut |n| per_operand[n]),
            };
            Scored {
                doc_id: doc.id.clone(),
                score: score.clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    pub ranked: Vec<Scored>,
    pub k: usize,
    pub query: String,
}

/// Highest `k` scores, ties broken by ascending doc id. `k` larger than the
/// input returns everything, sorted.
pub fn top_k(scored: &[Scored], k: usize, query: impl Into<String>) -> MiningResult {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    ranked.truncate(k);
    MiningResult {
        ranked,
        k,
        query: query.into(),
    }
}

/// Fraction of returned documents judged to satisfy the demand.
pub fn precision_at_k(
    result: &MiningResult,
    judgments: &HashMap<DocId, bool>,
) -> Result<f64, MiningError> {
    if result.ranked.is_empty() {
        return Err(MiningError::EmptyResult);
    }
    let mut ok = 0;
    for s in &result.ranked {
        match judgments.get(&s.doc_id) {
            Some(true) => ok += 1,
            Some(false) => {}
            None => return Err(MiningError::MissingJudgment(s.doc_id.clone())),
        }
    }
    Ok(ok as f64 / result.ranked.len() as f64)
}

/// Reads `{"id": .., "ok": true|false}` lines.
pub fn load_judgments(path: &Path) -> Result<HashMap<DocId, bool>, MiningError> {
    let mut out = HashMap::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| MiningError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            message: message.to_string(),
        };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let id = v
            .get("id")
            .and_then(DocId::from_json)
            .ok_or_else(|| bad("missing or invalid \"id\""))?;
        let ok = v
            .get("ok")
            .and_then(Value::as_bool)
            .ok_or_else(|| bad("missing boolean \"ok\""))?;
        out.insert(id, ok);
    }
    Ok(out)
}

/// A labeled evaluation example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

/// Reads `{"text": .., "label": ..}` lines.
pub fn load_eval_set(path: &Path) -> Result<Vec<LabeledText>, MiningError> {
    let mut out = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| MiningError::BadLine {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// An evaluation set embedded once, reusable across many classifiers.
#[derive(Debug, Clone)]
pub struct EmbeddedEvalSet {
    labels: Vec<String>,
    features: Vec<Vec<f64>>,
}

impl EmbeddedEvalSet {
    pub fn new(set: &[LabeledText], gateway: &Gateway) -> Result<Self, MiningError> {
        if set.is_empty() {
            return Err(MiningError::EmptyEvalSet);
        }
        let texts: Vec<String> = set.iter().map(|e| e.text.clone()).collect();
        let features = gateway
            .embed(&texts)?
            .into_iter()
            .map(|e| e.into_values())
            .collect();
        Ok(Self {
            labels: set.iter().map(|e| e.label.clone()).collect(),
            features,
        })
    }

    pub fn accuracy(&self, clf: &IncubatedClassifier) -> Result<f64, MiningError> {
        let mut correct = 0;
        for (label, x) in self.labels.iter().zip(&self.features) {
            let want = clf
                .instruction
                .label_index(label)
                .ok_or_else(|| MiningError::UnknownLabel(label.clone()))?;
            if argmax(&clf.predict_embedding(x)) == want {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.labels.len() as f64)
    }
}

/// Mean argmax accuracy of `clf` on `set`.
pub fn accuracy_eval(
    clf: &IncubatedClassifier,
    set: &[LabeledText],
    gateway: &Gateway,
) -> Result<f64, MiningError> {
    if set.is_empty() {
        return Err(MiningError::EmptyEvalSet);
    }
    if let Some(bad) = set
        .iter()
        .find(|e| clf.instruction.label_index(&e.label).is_none())
    {
        return Err(MiningError::UnknownLabel(bad.label.clone()));
    }
    clf.check_embedder(gateway)?;
    EmbeddedEvalSet::new(set, gateway)?.accuracy(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Dataset size for size sweeps, instruction id for robustness sweeps.
    pub key: String,
    pub accuracy: f64,
    pub gen_seconds: f64,
    pub train_seconds: f64,
}

/// Orders a generated pool canonically, then shuffles it with `seed`, so the
/// result depends only on the pool's contents.
pub fn canonical_shuffle(samples: &mut [LabeledSampleSet], seed: u64) {
    samples.sort_by(|a, b| a.texts().cmp(b.texts()));
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

/// Generates one pool at the largest size, then trains on nested prefixes of
/// it. Each point's `gen_seconds` is its share of the pool generation time,
/// prorated by size.
pub fn size_sweep(
    instruction: &Instruction,
    sizes: &[usize],
    gateway: &Gateway,
    eval_set: &[LabeledText],
    seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<SweepPoint>, MiningError> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(MiningError::InvalidSizes);
    }
    let eval = EmbeddedEvalSet::new(eval_set, gateway)?;
    let max = *sizes.last().expect("non-empty");
    let started = Instant::now();
    let pool = generate_dataset(instruction, max, gateway, seed)?;
    let gen_total = started.elapsed().as_secs_f64();
    let mut samples = pool.samples().to_vec();
    canonical_shuffle(&mut samples, seed);
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let take = size.min(samples.len());
        let subset = IncubationDataset::new(
            instruction.clone(),
            samples[..take].to_vec(),
            (0..take).collect(),
            0,
        );
        let started = Instant::now();
        let clf = train_classifier(&subset, cfg, gateway)?;
        let train_seconds = started.elapsed().as_secs_f64();
        out.push(SweepPoint {
            key: size.to_string(),
            accuracy: eval.accuracy(&clf)?,
            gen_seconds: gen_total * size as f64 / max as f64,
            train_seconds,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub points: Vec<SweepPoint>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// Full incubation per paraphrase, each with the same seed.
pub fn robustness_sweep(
    paraphrases: &[Instruction],
    count: usize,
    gateway: &Gateway,
    eval_set: &[LabeledText],
    seed: u64,
    cfg: &TrainConfig,
) -> Result<RobustnessReport, MiningError> {
    let first = paraphrases
        .first()
        .ok_or(MiningError::MismatchedLabelSets)?;
    if paraphrases.iter().any(|p| p.labels() != first.labels()) {
        return Err(MiningError::MismatchedLabelSets);
    }
    let eval = EmbeddedEvalSet::new(eval_set, gateway)?;
    let mut points = Vec::with_capacity(paraphrases.len());
    for p in paraphrases {
        let started = Instant::now();
        let dataset = generate_dataset(p, count, gateway, seed)?;
        let gen_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let clf = train_classifier(&dataset, cfg, gateway)?;
        let train_seconds = started.elapsed().as_secs_f64();
        points.push(SweepPoint {
            key: p.id().to_string(),
            accuracy: eval.accuracy(&clf)?,
            gen_seconds,
            train_seconds,
        });
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.accuracy).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|p| (p.accuracy - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(RobustnessReport {
        points,
        mean,
        std_dev: var.sqrt(),
    })
}

/// CSV with header `<key_name>,accuracy,gen_seconds,train_seconds`.
pub fn sweep_csv(key_name: &str, points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([key_name, "accuracy", "gen_seconds", "train_seconds"])
        .expect("in-memory write");
    for p in points {
        w.write_record([
            p.key.clone(),
            p.accuracy.to_string(),
            format!("{:.6}", p.gen_seconds),
            format!("{:.6}", p.train_seconds),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instruction;
    use crate::probe::{ProbeWeights, TrainingMetadata};
    use proptest::prelude::*;

    fn scored(pairs: &[(&str, f64)]) -> Vec<Scored> {
        pairs
            .iter()
            .map(|(id, s)| Scored {
                doc_id: DocId::from(*id),
                score: *s,
            })
            .collect()
    }

    pub(crate) fn zero_classifier(fingerprint: &str, dim: usize) -> IncubatedClassifier {
        let cfg = TrainConfig::default();
        IncubatedClassifier {
            instruction: validate_instruction("s", &["positive", "negative"]).unwrap(),
            weights: ProbeWeights::zeros(2, dim),
            embedder_fingerprint: fingerprint.into(),
            metadata: TrainingMetadata {
                final_train_loss: 0.0,
                holdout_accuracy: None,
                dataset_size: 0,
                train_size: 0,
                holdout_size: 0,
                epoch_losses: vec![],
                config: cfg,
            },
        }
    }

    #[test]
    fn doc_id_order_is_natural() {
        let mut ids: Vec<DocId> = ["10", "9", "b", "a", "002", "2"]
            .iter()
            .map(|s| DocId::from(*s))
            .collect();
        ids.sort();
        let got: Vec<&str> = ids.iter().map(|d| d.0.as_str()).collect();
        assert_eq!(got, ["002", "2", "9", "10", "a", "b"]);
    }

    #[test]
    fn ties_take_lowest_ids() {
        let s = scored(&[("3", 0.5), ("1", 0.5), ("10", 0.5), ("2", 0.5)]);
        let r = top_k(&s, 3, "q");
        let ids: Vec<&str> = r.ranked.iter().map(|d| d.doc_id.0.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert_eq!(top_k(&s, 99, "q").ranked.len(), 4);
    }

    #[test]
    fn precision_counts_and_missing() {
        let r = top_k(&scored(&[("a", 0.9), ("b", 0.8)]), 2, "q");
        let j: HashMap<DocId, bool> = [("a".into(), true), ("b".into(), false)].into();
        assert_eq!(precision_at_k(&r, &j).unwrap(), 0.5);
        let partial: HashMap<DocId, bool> = [("a".into(), true)].into();
        assert!(
            matches!(precision_at_k(&r, &partial), Err(MiningError::MissingJudgment(d)) if d.0 == "b")
        );
        let r100 = top_k(
            &(0..100)
                .map(|i| Scored {
                    doc_id: DocId(i.to_string()),
                    score: 0.5,
                })
                .collect::<Vec<_>>(),
            100,
            "q",
        );
        let j: HashMap<DocId, bool> = (0..100).map(|i| (DocId(i.to_string()), i < 84)).collect();
        assert!((precision_at_k(&r100, &j).unwrap() - 0.84).abs() < 1e-15);
    }

    #[test]
    fn corpus_formats() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("p.txt");
        fs::write(&plain, "first\n\nthird\n").unwrap();
        let c = Corpus::load(&plain).unwrap();
        assert_eq!(c.documents()[1].id, DocId::from("3"));
        let jl = dir.path().join("c.jsonl");
        fs::write(
            &jl,
            "{\"id\": 7, \"text\": \"x\"}\n{\"id\": \"q\", \"text\": \"y\"}\n",
        )
        .unwrap();
        let c = Corpus::load(&jl).unwrap();
        assert_eq!(c.documents()[0].id, DocId::from("7"));
        fs::write(
            &jl,
            "{\"id\": 1, \"text\": \"x\"}\n{\"id\": 1, \"text\": \"y\"}\n",
        )
        .unwrap();
        assert!(matches!(
            Corpus::load(&jl),
            Err(MiningError::DuplicateDocId(_))
        ));
        assert!(matches!(Corpus::new(vec![]), Err(MiningError::EmptyCorpus)));
    }

    #[test]
    fn empty_eval_set_rejected() {
        let gw = crate::gateway::Gateway::mock(
            std::sync::Arc::new(
                crate::gateway::MockBackend::new(0, crate::gateway::Scenario::separable2())
                    .unwrap(),
            ),
            2,
        );
        let clf = zero_classifier(&gw.embedder_fingerprint().unwrap(), 64);
        assert!(matches!(
            accuracy_eval(&clf, &[], &gw),
            Err(MiningError::EmptyEvalSet)
        ));
        let bad = [LabeledText {
            text: "x".into(),
            label: "nope".into(),
        }];
        assert!(
            matches!(accuracy_eval(&clf, &bad, &gw), Err(MiningError::UnknownLabel(l)) if l == "nope")
        );
    }

    #[test]
    fn csv_header() {
        let csv = sweep_csv(
            "size",
            &[SweepPoint {
                key: "4".into(),
                accuracy: 0.5,
                gen_seconds: 1.0,
                train_seconds: 0.25,
            }],
        );
        assert_eq!(
            csv,
            "size,accuracy,gen_seconds,train_seconds\n4,0.5,1.000000,0.250000\n"
        );
    }

    proptest! {
        #[test]
        fn top_k_is_sorted_prefix(scores in prop::collection::vec(0u8..5, 1..40), k in 1usize..50) {
            let s: Vec<Scored> = scores.iter().enumerate()
                .map(|(i, v)| Scored { doc_id: DocId(i.to_string()), score: *v as f64 / 4.0 })
                .collect();
            let r = top_k(&s, k, "q");
            prop_assert_eq!(r.ranked.len(), k.min(s.len()));
            let kept: HashSet<&DocId> = r.ranked.iter().map(|d| &d.doc_id).collect();
            let min_kept = r.ranked.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
            for x in &s {
                if !kept.contains(&x.doc_id) {
                    prop_assert!(x.score <= min_kept);
                }
            }
            for w in r.ranked.windows(2) {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id));
            }
        }

        #[test]
        fn precision_complements(flags in prop::collection::vec(any::<bool>(), 1..30)) {
            let s: Vec<Scored> = (0..flags.len()).map(|i| Scored { doc_id: DocId(i.to_string()), score: 0.5 }).collect();
            let r = top_k(&s, flags.len(), "q");
            let j: HashMap<DocId, bool> = flags.iter().enumerate().map(|(i, f)| (DocId(i.to_string()), *f)).collect();
            let n: HashMap<DocId, bool> = j.iter().map(|(k, v)| (k.clone(), !v)).collect();
            let total = precision_at_k(&r, &j).unwrap() + precision_at_k(&r, &n).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
