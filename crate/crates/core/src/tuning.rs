//! Instruction-tuning corpus: seed pairs from local labeled datasets,
//! in-context augmentation, and the chat-format JSONL export.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, GenerationRequest, Message, Role};
use crate::model::{
    validate_instruction, Instruction, InstructionDataPair, LabeledSampleSet, Provenance,
};
use crate::parse::{find_regions, parse_sample, read_marked_string, serialize_sample};
use crate::prompt::{
    icl_messages, parse_rendered_instruction, render_instruction, request_seed, Sampling,
};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("no dataset descriptors given")]
    EmptyDescriptorList,
    #[error("descriptor {0:?} has no labeled texts")]
    LabellessDescriptor(String),
    #[error("descriptor {name:?}: {message}")]
    InvalidDescriptor { name: String, message: String },
    #[error("augmentation needs at least 2 seed pairs, got {0}")]
    TooFewSeedPairs(usize),
    #[error("attempt budget exhausted: kept {kept} after {attempted} attempts")]
    AttemptBudgetExhausted { kept: usize, attempted: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("tuning corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
}

/// A local labeled dataset whose description becomes a seed instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescriptor {
    pub name: String,
    pub description: String,
    /// Labels in first-appearance order, each with its texts.
    pub labeled_texts: Vec<(String, Vec<String>)>,
    pub source_note: String,
}

#[derive(Deserialize)]
struct MetaFile {
    name: Option<String>,
    description: String,
    #[serde(default)]
    source_note: String,
}

#[derive(Deserialize)]
struct LabeledLine {
    text: String,
    label: String,
}

impl DatasetDescriptor {
    /// Reads `meta.json` and `data.jsonl` from one dataset directory.
    pub fn load_dir(dir: &Path) -> Result<Self, TuningError> {
        let fallback = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let invalid = |message: String| TuningError::InvalidDescriptor {
            name: fallback.clone(),
            message,
        };
        let meta: MetaFile = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)
            .map_err(|e| invalid(format!("meta.json: {e}")))?;
        let mut labeled_texts: Vec<(String, Vec<String>)> = Vec::new();
        for (i, line) in fs::read_to_string(dir.join("data.jsonl"))?
            .lines()
            .enumerate()
        {
            if line.trim().is_empty() {
                continue;
            }
            let row: LabeledLine = serde_json::from_str(line)
                .map_err(|e| invalid(format!("data.jsonl line {}: {e}", i + 1)))?;
            match labeled_texts.iter_mut().find(|(l, _)| *l == row.label) {
                Some((_, texts)) => texts.push(row.text),
                None => labeled_texts.push((row.label, vec![row.text])),
            }
        }
        let d = Self {
            name: meta.name.unwrap_or(fallback),
            description: meta.description,
            labeled_texts,
            source_note: meta.source_note,
        };
        d.validate()?;
        Ok(d)
    }

    /// Every subdirectory of `root`, sorted by directory name.
    pub fn load_all(root: &Path) -> Result<Vec<Self>, TuningError> {
        let mut dirs: Vec<_> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| Self::load_dir(d)).collect()
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        if self.labeled_texts.is_empty() {
            return Err(TuningError::LabellessDescriptor(self.name.clone()));
        }
        self.instruction().map(|_| ())
    }

    fn instruction(&self) -> Result<Instruction, TuningError> {
        let invalid = |message: String| TuningError::InvalidDescriptor {
            name: self.name.clone(),
            message,
        };
        for (label, texts) in &self.labeled_texts {
            if texts.iter().all(|t| t.trim().is_empty()) {
                return Err(invalid(format!("label {label:?} has no texts")));
            }
        }
        let labels: Vec<&str> = self.labeled_texts.iter().map(|(l, _)| l.as_str()).collect();
        validate_instruction(&self.description, &labels).map_err(|e| invalid(e.to_string()))
    }
}

/// Converts each descriptor into an instruction and draws up to `per_class`
/// pairs from it without replacement: pair `k` takes the `k`-th text of each
/// label after a seeded shuffle.
pub fn build_seed_pairs(
    descriptors: &[DatasetDescriptor],
    per_class: usize,
    seed: u64,
) -> Result<Vec<InstructionDataPair>, TuningError> {
    if descriptors.is_empty() {
        return Err(TuningError::EmptyDescriptorList);
    }
    let mut out = Vec::new();
    for (di, d) in descriptors.iter().enumerate() {
        d.validate()?;
        let instruction = d.instruction()?;
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(seed, di as u64));
        let shuffled: Vec<Vec<&str>> = d
            .labeled_texts
            .iter()
            .map(|(_, texts)| {
                let mut t: Vec<&str> = texts
                    .iter()
                    .map(|t| t.trim())
                    .filter(|t| !t.is_empty())
                    .collect();
                t.shuffle(&mut rng);
                t
            })
            .collect();
        let available = shuffled.iter().map(Vec::len).min().unwrap_or(0);
        for k in 0..per_class.min(available) {
            let texts = shuffled.iter().map(|t| t[k].to_string()).collect();
            let sample = LabeledSampleSet::from_ordered(&instruction, texts)
                .expect("texts are non-empty and match the label count");
            out.push(InstructionDataPair::new(
                instruction.clone(),
                sample,
                Provenance::Seed,
            ));
        }
    }
    Ok(out)
}

/// Reads the `(instruction, sample)` proposed by one augmentation reply.
/// The instruction comes from the `"Input"` field; the sample must parse
/// against that instruction's own labels.
pub fn parse_icl_reply(reply: &str) -> Option<InstructionDataPair> {
    let input = read_marked_string(reply, "\"input\"", reply.len())
        .or_else(|| read_marked_string(reply, "input", reply.len()))?;
    let lower = reply.to_ascii_lowercase();
    let output_at = lower
        .find("\"output\"")
        .or_else(|| lower.rfind("output"))
        .unwrap_or(0);
    let output = &reply[output_at..];
    let (demand, labels) = match parse_rendered_instruction(&input) {
        Some(parsed) => parsed,
        None => {
            let region = find_regions(output)
                .into_iter()
                .find_map(|r| r.lexed.ok())?;
            let keys = region.0.into_iter().map(|e| e.key).collect();
            (input, keys)
        }
    };
    let instruction = validate_instruction(&demand, &labels).ok()?;
    let sample = parse_sample(output, &instruction).outcome.ok()?;
    Some(InstructionDataPair::new(
        instruction,
        sample,
        Provenance::IclAugmented,
    ))
}

fn icl_request(seed_pairs: &[InstructionDataPair], seed: u64, attempt: u64) -> GenerationRequest {
    let s = request_seed(seed, attempt);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let picked: Vec<&InstructionDataPair> = seed_pairs.choose_multiple(&mut rng, 2).collect();
    let sampling = Sampling::default();
    GenerationRequest::new(
        icl_messages(picked[0], picked[1]),
        sampling.temperature,
        sampling.max_tokens,
        Some(s),
    )
    .expect("icl chat ends with a user turn")
}

/// Prompts for new instruction/sample pairs with two randomly drawn seed
/// exemplars per query until `target_count` replies parse, giving up after
/// `3 * target_count` attempts. Kept pairs are in attempt order.
pub fn augment_icl(
    seed_pairs: &[InstructionDataPair],
    target_count: usize,
    gateway: &Gateway,
    seed: u64,
) -> Result<Vec<InstructionDataPair>, TuningError> {
    if seed_pairs.len() < 2 {
        return Err(TuningError::TooFewSeedPairs(seed_pairs.len()));
    }
    let budget = 3 * target_count;
    let mut kept = Vec::new();
    let mut attempted = 0;
    while kept.len() < target_count && attempted < budget {
        let wave = (target_count - kept.len()).min(budget - attempted);
        let reqs: Vec<_> = (attempted..attempted + wave)
            .map(|i| icl_request(seed_pairs, seed, i as u64))
            .collect();
        for reply in gateway.complete_all(&reqs) {
            attempted += 1;
            match reply {
                Ok(raw) => {
                    if let Some(p) = parse_icl_reply(&raw) {
                        kept.push(p);
                    }
                }
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(_) => {}
            }
        }
    }
    if kept.len() < target_count {
        return Err(TuningError::AttemptBudgetExhausted {
            kept: kept.len(),
            attempted,
        });
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TuningCorpus {
    pub pairs: Vec<InstructionDataPair>,
}

impl TuningCorpus {
    pub fn new(pairs: Vec<InstructionDataPair>) -> Self {
        Self { pairs }
    }

    pub fn stats(&self) -> BTreeMap<Provenance, usize> {
        let mut out = BTreeMap::new();
        for p in &self.pairs {
            *out.entry(p.provenance).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ChatMessage {
    role: Role,
    content: String,
}

#[derive(Serialize, Deserialize)]
struct LineMeta {
    provenance: Provenance,
    instruction_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ChatLine {
    messages: Vec<ChatMessage>,
    meta: LineMeta,
}

pub fn export_line(pair: &InstructionDataPair) -> String {
    let line = ChatLine {
        messages: vec![
            ChatMessage {
                role: Role::User,
                content: render_instruction(&pair.instruction),
            },
            ChatMessage {
                role: Role::Assistant,
                content: serialize_sample(&pair.sample, &pair.instruction),
            },
        ],
        meta: LineMeta {
            provenance: pair.provenance,
            instruction_id: pair.instruction.id().to_string(),
            batch_id: pair.batch_id.clone(),
        },
    };
    serde_json::to_string(&line).expect("chat line serializes")
}

/// Inverse of [`export_line`]. The assistant message must parse with no
/// repairs.
pub fn import_line(line: &str) -> Result<InstructionDataPair, String> {
    let chat: ChatLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let [user, assistant] = chat.messages.as_slice() else {
        return Err("expected exactly two messages".into());
    };
    if user.role != Role::User || assistant.role != Role::Assistant {
        return Err("expected a user then an assistant message".into());
    }
    let (demand, labels) = parse_rendered_instruction(&user.content)
        .ok_or("user message is not a rendered instruction")?;
    let instruction = validate_instruction(&demand, &labels)
        .map_err(|e| e.to_string())?
        .with_id(chat.meta.instruction_id);
    let report = parse_sample(&assistant.content, &instruction);
    if !report.repairs.is_empty() {
        return Err("assistant message is not canonical".into());
    }
    let sample = report.outcome.map_err(|e| e.to_string())?;
    let mut pair = InstructionDataPair::new(instruction, sample, chat.meta.provenance);
    pair.batch_id = chat.meta.batch_id;
    Ok(pair)
}

pub fn corpus_to_jsonl(corpus: &TuningCorpus) -> String {
    corpus.pairs.iter().map(|p| export_line(p) + "\n").collect()
}

/// Writes one chat JSON object per line. An empty corpus is an error and
/// leaves no file behind.
pub fn export_tuning_corpus(corpus: &TuningCorpus, path: &Path) -> Result<(), TuningError> {
    if corpus.pairs.is_empty() {
        return Err(TuningError::EmptyCorpus);
    }
    fs::write(path, corpus_to_jsonl(corpus))?;
    Ok(())
}

pub fn import_tuning_corpus(path: &Path) -> Result<TuningCorpus, TuningError> {
    let mut pairs = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(import_line(line).map_err(|message| TuningError::BadLine {
            line: i + 1,
            message,
        })?);
    }
    Ok(TuningCorpus::new(pairs))
}

/// Plain chat messages for a pair, as sent to a fine-tuning endpoint.
pub fn pair_messages(pair: &InstructionDataPair) -> Vec<Message> {
    vec![
        Message::new(Role::User, render_instruction(&pair.instruction)),
        Message::new(
            Role::Assistant,
            serialize_sample(&pair.sample, &pair.instruction),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, Scenario};
    use std::sync::Arc;

    fn descriptor(name: &str, per_label: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            name: name.into(),
            description: format!("Classify {name} texts"),
            labeled_texts: vec![
                (
                    "yes".into(),
                    (0..per_label).map(|i| format!("{name} yes {i}")).collect(),
                ),
                (
                    "no".into(),
                    (0..per_label).map(|i| format!("{name} no {i}")).collect(),
                ),
            ],
            source_note: String::new(),
        }
    }

    fn gw(rate: f64) -> Gateway {
        let s = Scenario::sentiment_topic().with_malformation_rate(rate);
        Gateway::mock(Arc::new(MockBackend::new(5, s).unwrap()), 4)
    }

    #[test]
    fn seed_pairs_capped_by_availability() {
        let pairs = build_seed_pairs(&[descriptor("a", 3)], 10, 0).unwrap();
        assert_eq!(pairs.len(), 3);
        let mut yes: Vec<&str> = pairs.iter().map(|p| p.sample.text(0)).collect();
        yes.sort();
        assert_eq!(yes, ["a yes 0", "a yes 1", "a yes 2"]);
    }

    #[test]
    fn seed_pairs_count_and_determinism() {
        let ds: Vec<_> = (0..25).map(|i| descriptor(&format!("d{i}"), 12)).collect();
        let a = build_seed_pairs(&ds, 10, 7).unwrap();
        assert_eq!(a.len(), 250);
        assert_eq!(a, build_seed_pairs(&ds, 10, 7).unwrap());
        assert!(a.iter().all(|p| p.provenance == Provenance::Seed));
    }

    #[test]
    fn seed_pair_errors() {
        assert!(matches!(
            build_seed_pairs(&[], 1, 0),
            Err(TuningError::EmptyDescriptorList)
        ));
        let mut d = descriptor("x", 1);
        d.labeled_texts.clear();
        assert!(matches!(
            build_seed_pairs(&[d], 1, 0),
            Err(TuningError::LabellessDescriptor(n)) if n == "x"
        ));
    }

    #[test]
    fn augmentation_without_malformation_keeps_every_attempt() {
        let seeds = build_seed_pairs(&[descriptor("a", 4)], 4, 0).unwrap();
        let out = augment_icl(&seeds, 50, &gw(0.0), 3).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|p| p.provenance == Provenance::IclAugmented));
        assert_eq!(out, augment_icl(&seeds, 50, &gw(0.0), 3).unwrap());
    }

    #[test]
    fn kept_exactly_when_well_formed() {
        let seeds = build_seed_pairs(&[descriptor("a", 4)], 4, 0).unwrap();
        let g = gw(0.5);
        let rate = 0.5f64;
        let mut kept = 0;
        for i in 0..60u64 {
            let req = icl_request(&seeds, 9, i);
            let s = (req.seed().unwrap() % (1 << 40)) as f64;
            let malformed = ((s + 1.0) * rate).floor() > (s * rate).floor();
            let parsed = parse_icl_reply(&g.complete(&req).unwrap());
            assert_eq!(parsed.is_some(), !malformed, "attempt {i}");
            kept += parsed.is_some() as usize;
        }
        assert_eq!(kept, 30);
        let out = augment_icl(&seeds, 10, &g, 9).unwrap();
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn budget_exhaustion() {
        let seeds = build_seed_pairs(&[descriptor("a", 4)], 4, 0).unwrap();
        assert!(matches!(
            augment_icl(&seeds, 4, &gw(1.0), 3),
            Err(TuningError::AttemptBudgetExhausted {
                kept: 0,
                attempted: 12
            })
        ));
        assert!(matches!(
            augment_icl(&seeds[..1], 4, &gw(0.0), 3),
            Err(TuningError::TooFewSeedPairs(1))
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let seeds = build_seed_pairs(&[descriptor("a", 3), descriptor("b", 2)], 10, 1).unwrap();
        let mut corpus = TuningCorpus::new(seeds);
        corpus.pairs[0].batch_id = Some("abc".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        export_tuning_corpus(&corpus, &p).unwrap();
        let back = import_tuning_corpus(&p).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(corpus_to_jsonl(&back), fs::read_to_string(&p).unwrap());

        let empty = dir.path().join("e.jsonl");
        assert!(matches!(
            export_tuning_corpus(&TuningCorpus::default(), &empty),
            Err(TuningError::EmptyCorpus)
        ));
        assert!(!empty.exists());
    }
}
