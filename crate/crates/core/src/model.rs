//! Shared domain types: instructions, labeled sample sets and the datasets
//! built from them.
//!
//! Everything here is immutable after construction. Validation happens in
//! constructors so downstream code can rely on the invariants.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Validation failures for the core domain types.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("instruction demand text is empty")]
    EmptyDemand,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("an instruction needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("label at position {0} is empty")]
    EmptyLabel(usize),
    #[error("sample has {got} texts but the instruction declares {expected} labels")]
    ArityMismatch { expected: usize, got: usize },
    #[error("sample text for label {0:?} is empty")]
    EmptyText(String),
}

/// A user demand plus its ordered label set: the unit of incubation.
///
/// Labels keep their declaration order; that order is the canonical order used
/// for serialization, embedding concatenation and classifier rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    id: String,
    demand: String,
    labels: Vec<String>,
}

impl Instruction {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn demand(&self) -> &str {
        &self.demand
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of declared labels (always at least 2).
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Replaces the content-derived id with a caller-chosen one.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Same demand and labels, ignoring the id.
    pub fn same_task(&self, other: &Instruction) -> bool {
        self.demand == other.demand && self.labels == other.labels
    }
}

/// Validates raw user input into an [`Instruction`].
///
/// Demand and labels are whitespace-trimmed; labels are compared
/// case-sensitively. The id is a digest of the trimmed content, so
/// re-validating an instruction's own fields reproduces it exactly.
pub fn validate_instruction<S: AsRef<str>>(
    raw_demand: &str,
    raw_labels: &[S],
) -> Result<Instruction, ModelError> {
    let demand = raw_demand.trim();
    if demand.is_empty() {
        return Err(ModelError::EmptyDemand);
    }
    if raw_labels.len() < 2 {
        return Err(ModelError::TooFewLabels(raw_labels.len()));
    }
    let mut seen = HashSet::with_capacity(raw_labels.len());
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, raw) in raw_labels.iter().enumerate() {
        let label = raw.as_ref().trim();
        if label.is_empty() {
            return Err(ModelError::EmptyLabel(i));
        }
        if !seen.insert(label) {
            return Err(ModelError::DuplicateLabel(label.to_string()));
        }
        labels.push(label.to_string());
    }
    let id = instruction_digest(demand, &labels);
    Ok(Instruction {
        id,
        demand: demand.to_string(),
        labels,
    })
}

fn instruction_digest(demand: &str, labels: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(demand.as_bytes());
    for l in labels {
        h.update([0u8]);
        h.update(l.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// One generation outcome: exactly one text per declared label.
///
/// Texts are stored in the instruction's canonical label order, trimmed of
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSampleSet {
    texts: Vec<String>,
}

impl LabeledSampleSet {
    /// Builds a sample from texts given in canonical label order.
    pub fn from_ordered(instruction: &Instruction, texts: Vec<String>) -> Result<Self, ModelError> {
        if texts.len() != instruction.n_labels() {
            return Err(ModelError::ArityMismatch {
                expected: instruction.n_labels(),
                got: texts.len(),
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (label, text) in instruction.labels().iter().zip(texts) {
            let t = text.trim();
            if t.is_empty() {
                return Err(ModelError::EmptyText(label.clone()));
            }
            out.push(t.to_string());
        }
        Ok(Self { texts: out })
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, label_index: usize) -> &str {
        &self.texts[label_index]
    }

    /// `(label, text)` pairs in canonical order.
    pub fn entries<'a>(
        &'a self,
        instruction: &'a Instruction,
    ) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        instruction
            .labels()
            .iter()
            .map(String::as_str)
            .zip(self.texts.iter().map(String::as_str))
    }
}

/// A flattened `(text, label index)` training example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

/// Generated training data for one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct IncubationDataset {
    instruction: Instruction,
    samples: Vec<LabeledSampleSet>,
    slots: Vec<usize>,
    examples: Vec<Example>,
    example_slots: Vec<usize>,
    /// Generation slots that produced no usable sample.
    pub dropped: usize,
}

impl IncubationDataset {
    /// Builds the dataset, flattening samples in order and dropping exact
    /// `(text, label)` duplicates (first occurrence wins).
    pub fn new(
        instruction: Instruction,
        samples: Vec<LabeledSampleSet>,
        slots: Vec<usize>,
        dropped: usize,
    ) -> Self {
        assert_eq!(samples.len(), slots.len(), "one slot per sample");
        let mut seen = HashSet::new();
        let mut examples = Vec::new();
        let mut example_slots = Vec::new();
        for (sample, &slot) in samples.iter().zip(&slots) {
            for (label, text) in sample.texts().iter().enumerate() {
                let ex = Example {
                    text: text.clone(),
                    label,
                };
                if seen.insert(ex.clone()) {
                    examples.push(ex);
                    example_slots.push(slot);
                }
            }
        }
        Self {
            instruction,
            samples,
            slots,
            examples,
            example_slots,
            dropped,
        }
    }

    /// Builds a dataset directly from flattened examples (e.g. re-imported
    /// rows). There are no sample sets in this case.
    pub fn from_examples(
        instruction: Instruction,
        rows: impl IntoIterator<Item = (Example, usize)>,
    ) -> Self {
        let mut seen = HashSet::new();
        let mut examples = Vec::new();
        let mut example_slots = Vec::new();
        for (ex, slot) in rows {
            if seen.insert(ex.clone()) {
                examples.push(ex);
                example_slots.push(slot);
            }
        }
        Self {
            instruction,
            samples: Vec::new(),
            slots: Vec::new(),
            examples,
            example_slots,
            dropped: 0,
        }
    }

    pub fn instruction(&self) -> &Instruction {
        &self.instruction
    }

    pub fn samples(&self) -> &[LabeledSampleSet] {
        &self.samples
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Deduplicated flattened view.
    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Slot of the sample each example came from.
    pub fn example_slots(&self) -> &[usize] {
        &self.example_slots
    }

    pub fn kept(&self) -> usize {
        self.samples.len()
    }

    /// Examples per label index.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.instruction.n_labels()];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    IclAugmented,
    Diversified,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Seed => "seed",
            Provenance::IclAugmented => "icl_augmented",
            Provenance::Diversified => "diversified",
        })
    }
}

/// An instruction paired with one sample that satisfies it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionDataPair {
    pub instruction: Instruction,
    pub sample: LabeledSampleSet,
    pub provenance: Provenance,
    /// Shared by pairs that must stay in one optimization batch.
    pub batch_id: Option<String>,
}

impl InstructionDataPair {
    pub fn new(instruction: Instruction, sample: LabeledSampleSet, provenance: Provenance) -> Self {
        Self {
            instruction,
            sample,
            provenance,
            batch_id: None,
        }
    }
}
