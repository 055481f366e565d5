//! Dataset generation for incubation and the dataset JSONL format.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::model::{Example, IncubationDataset, Instruction, LabeledSampleSet};
use crate::parse::parse_sample;
use crate::prompt::{generation_request, request_seed, Sampling};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("count must be positive")]
    ZeroCount,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("generation collapsed: only {kept} of {requested} slots produced a usable sample")]
    GenerationCollapse {
        kept: usize,
        requested: usize,
        last_error: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationOptions {
    pub sampling: Sampling,
    /// Extra attempts per slot after a parse or transient failure.
    pub retries_per_slot: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            sampling: Sampling::default(),
            retries_per_slot: 3,
        }
    }
}

pub fn generate_dataset(
    instruction: &Instruction,
    count: usize,
    gateway: &Gateway,
    seed: u64,
) -> Result<IncubationDataset, GenerateError> {
    generate_dataset_with(
        instruction,
        count,
        gateway,
        seed,
        GenerationOptions::default(),
    )
}

/// Requests `count` sample sets. A slot whose reply does not parse is retried
/// with a fresh request seed up to `retries_per_slot` times; slots that never
/// succeed are counted as dropped. More than half dropped is an error.
pub fn generate_dataset_with(
    instruction: &Instruction,
    count: usize,
    gateway: &Gateway,
    seed: u64,
    opts: GenerationOptions,
) -> Result<IncubationDataset, GenerateError> {
    if count == 0 {
        return Err(GenerateError::ZeroCount);
    }
    let mut results: Vec<Option<LabeledSampleSet>> = vec![None; count];
    let mut pending: Vec<usize> = (0..count).collect();
    let mut last_error = None;
    for round in 0..=opts.retries_per_slot {
        if pending.is_empty() {
            break;
        }
        let reqs: Vec<_> = pending
            .iter()
            .map(|&slot| {
                let round_seed = seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                generation_request(
                    instruction,
                    opts.sampling,
                    request_seed(round_seed, slot as u64),
                )
            })
            .collect();
        let replies = gateway.complete_all(&reqs);
        let mut still = Vec::new();
        for (&slot, reply) in pending.iter().zip(replies) {
            match reply {
                Ok(raw) => match parse_sample(&raw, instruction).outcome {
                    Ok(s) => results[slot] = Some(s),
                    Err(e) => {
                        last_error = Some(e.to_string());
                        still.push(slot);
                    }
                },
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    last_error = Some(e.to_string());
                    still.push(slot);
                }
            }
        }
        pending = still;
    }
    let dropped = pending.len();
    if dropped * 2 > count {
        return Err(GenerateError::GenerationCollapse {
            kept: count - dropped,
            requested: count,
            last_error,
        });
    }
    let (slots, samples): (Vec<usize>, Vec<LabeledSampleSet>) = results
        .into_iter()
        .enumerate()
        .filter_map(|(slot, s)| s.map(|s| (slot, s)))
        .unzip();
    Ok(IncubationDataset::new(
        instruction.clone(),
        samples,
        slots,
        dropped,
    ))
}

/// One line of the dataset JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub text: String,
    pub label: String,
    pub instruction_id: String,
    pub slot: usize,
}

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    BadRow { line: usize, message: String },
}

pub fn dataset_rows(dataset: &IncubationDataset) -> Vec<DatasetRow> {
    let instr = dataset.instruction();
    dataset
        .examples()
        .iter()
        .zip(dataset.example_slots())
        .map(|(e, &slot)| DatasetRow {
            text: e.text.clone(),
            label: instr.labels()[e.label].clone(),
            instruction_id: instr.id().to_string(),
            slot,
        })
        .collect()
}

pub fn write_dataset_jsonl(dataset: &IncubationDataset, out: &mut impl Write) -> io::Result<()> {
    for row in dataset_rows(dataset) {
        serde_json::to_writer(&mut *out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &IncubationDataset, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_dataset_jsonl(dataset, &mut buf)?;
    fs::write(path, buf)
}

/// Reads rows and rebuilds the flattened dataset for `instruction`. Rows
/// with a label outside the instruction are rejected.
pub fn load_dataset(
    path: &Path,
    instruction: &Instruction,
) -> Result<IncubationDataset, DatasetIoError> {
    let file = fs::File::open(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DatasetIoError::BadRow {
            line: i + 1,
            message,
        };
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label = instruction
            .label_index(&row.label)
            .ok_or_else(|| bad(format!("unknown label {:?}", row.label)))?;
        rows.push((
            Example {
                text: row.text,
                label,
            },
            row.slot,
        ));
    }
    Ok(IncubationDataset::from_examples(instruction.clone(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, Scenario};
    use crate::model::validate_instruction;
    use std::sync::Arc;

    fn gw(rate: f64) -> Gateway {
        let s = Scenario::separable2().with_malformation_rate(rate);
        Gateway::mock(Arc::new(MockBackend::new(3, s).unwrap()), 4)
    }

    fn instr() -> Instruction {
        validate_instruction("sentiment", &["positive", "negative"]).unwrap()
    }

    #[test]
    fn clean_generation_keeps_every_slot() {
        let d = generate_dataset(&instr(), 20, &gw(0.0), 1).unwrap();
        assert_eq!(d.kept(), 20);
        assert_eq!(d.dropped, 0);
        assert_eq!(d.slots(), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn retries_recover_malformed_slots() {
        let d = generate_dataset(&instr(), 40, &gw(0.3), 1).unwrap();
        assert!(d.kept() >= 38, "kept {}", d.kept());
    }

    #[test]
    fn total_malformation_collapses() {
        let err = generate_dataset(&instr(), 10, &gw(1.0), 1).unwrap_err();
        assert!(matches!(
            err,
            GenerateError::GenerationCollapse {
                kept: 0,
                requested: 10,
                ..
            }
        ));
    }

    #[test]
    fn unknown_label_is_fatal() {
        let i = validate_instruction("x", &["positive", "zebra"]).unwrap();
        assert!(matches!(
            generate_dataset(&i, 4, &gw(0.0), 1),
            Err(GenerateError::Gateway(GatewayError::UnknownScenarioLabel(
                _
            )))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let d = generate_dataset(&instr(), 8, &gw(0.0), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&d, &p).unwrap();
        let back = load_dataset(&p, &instr()).unwrap();
        assert_eq!(back.examples(), d.examples());
        assert_eq!(back.example_slots(), d.example_slots());
    }
}
