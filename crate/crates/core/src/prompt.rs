//! Prompt and message templates.
//!
//! The instruction rendering is shared by dataset generation and the tuning
//! corpus export, so a model tuned on the export sees the same prompt shape
//! at incubation time.

use crate::gateway::{GenerationRequest, Message, Role};
use crate::model::{Instruction, InstructionDataPair};
use crate::parse::serialize_sample;

const LABELS_INTRO: &str =
    "\n\nRespond with a Python dictionary whose keys are exactly these labels, in this order: ";
const LABELS_OUTRO: &str = ". Each value is one text for that label.";

/// The fixed user turn of the in-context augmentation prompt.
pub const ICL_USER_MESSAGE: &str =
    "Generate an imaginative instruction to build a text classifier and its corresponding samples.";

/// Label set used for the complement class in two-label classifiers.
pub const OTHER_LABEL: &str = "Other";

/// Demand text followed by a fixed suffix enumerating the labels in canonical
/// order.
pub fn render_instruction(instruction: &Instruction) -> String {
    let quoted: Vec<String> = instruction
        .labels()
        .iter()
        .map(|l| serde_json::to_string(l).expect("strings serialize"))
        .collect();
    let labels = format!("[{}]", quoted.join(", "));
    format!(
        "{}{LABELS_INTRO}{labels}{LABELS_OUTRO}",
        instruction.demand()
    )
}

/// Inverse of [`render_instruction`]: returns `(demand, labels)`.
pub fn parse_rendered_instruction(text: &str) -> Option<(String, Vec<String>)> {
    let (demand, rest) = text.rsplit_once(LABELS_INTRO)?;
    let tail = rest.strip_suffix(LABELS_OUTRO)?;
    let labels: Vec<String> = serde_json::from_str(tail).ok()?;
    Some((demand.to_string(), labels))
}

/// One in-context exemplar in the `"Input": ... "Output": {...}` shape. The
/// input is the full rendered instruction so the label set is explicit.
pub fn render_icl_exemplar(pair: &InstructionDataPair) -> String {
    render_icl_reply(
        &pair.instruction,
        &serialize_sample(&pair.sample, &pair.instruction),
    )
}

pub(crate) fn render_icl_reply(instruction: &Instruction, output: &str) -> String {
    let mut input = String::new();
    crate::parse::push_quoted(&mut input, &render_instruction(instruction));
    format!("\"Input\": {input}\n\"Output\": {output}")
}

/// Chat for one augmentation query: two exemplar exchanges followed by the
/// open user turn.
pub fn icl_messages(first: &InstructionDataPair, second: &InstructionDataPair) -> Vec<Message> {
    vec![
        Message::new(Role::User, ICL_USER_MESSAGE),
        Message::new(Role::Assistant, render_icl_exemplar(first)),
        Message::new(Role::User, ICL_USER_MESSAGE),
        Message::new(Role::Assistant, render_icl_exemplar(second)),
        Message::new(Role::User, ICL_USER_MESSAGE),
    ]
}

/// Sampling settings for data generation requests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 512,
        }
    }
}

pub fn generation_request(
    instruction: &Instruction,
    sampling: Sampling,
    seed: u64,
) -> GenerationRequest {
    GenerationRequest::new(
        vec![Message::new(Role::User, render_instruction(instruction))],
        sampling.temperature,
        sampling.max_tokens,
        Some(seed),
    )
    .expect("single user message is a valid request")
}

/// Per-request seed for the `index`-th request of a run. Consecutive indices
/// map to consecutive seeds.
pub fn request_seed(run_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer spreads nearby run seeds apart
    let mut z = run_seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)).wrapping_add(index)
}

/// Demand text used when a label is incubated on its own against a
/// catch-all class.
pub fn target_vs_other_demand(target: &str) -> String {
    format!("Classify whether a text is \"{target}\". Texts that are not \"{target}\" belong to \"{OTHER_LABEL}\".")
}

/// Template for external judges of mined texts. `{demand}` and `{text}` are
/// substituted by the caller.
pub const JUDGE_TEMPLATE: &str =
    "Demand: {demand}\nText: {text}\nDoes the text satisfy the demand? Answer \"yes\" or \"no\".";

pub fn render_judge_prompt(demand: &str, text: &str) -> String {
    JUDGE_TEMPLATE
        .replace("{demand}", demand)
        .replace("{text}", text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instruction;

    #[test]
    fn rendering_round_trips() {
        let i =
            validate_instruction("Is it \"spam\"?\nBe strict.", &["spam", "ham, eggs"]).unwrap();
        let text = render_instruction(&i);
        assert!(text.ends_with(
            "in this order: [\"spam\", \"ham, eggs\"]. Each value is one text for that label."
        ));
        let (demand, labels) = parse_rendered_instruction(&text).unwrap();
        assert_eq!(demand, i.demand());
        assert_eq!(labels, i.labels());
    }
}
