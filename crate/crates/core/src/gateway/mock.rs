//! Deterministic offline backend.
//!
//! Completions are drawn from scenario-defined template pools with an RNG
//! seeded from the request, so identical requests always produce identical
//! text regardless of call order or concurrency. Embeddings come from a
//! character-trigram hashing embedder plus fixed per-keyword-group offsets,
//! which makes scenario classes linearly separable.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, GenerationRequest};
use crate::prompt::{parse_rendered_instruction, ICL_USER_MESSAGE};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed character-trigram feature hashing, L2-normalized.
///
/// The text is lowercased and padded with one space on each side; each
/// trigram's FNV-1a hash picks bucket `h % dim` and sign `+1`/`-1` from the
/// top bit.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut v = vec![0.0; dim];
    let mut buf = String::new();
    for w in padded.windows(3) {
        buf.clear();
        buf.extend(w);
        let h = fnv1a64(buf.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed unit direction for a keyword group, derived from its name.
/// Component `k` comes from the top 53 bits of `mix64(fnv1a64("{name}#{k}"))`
/// mapped to `[-1, 1)`.
pub fn group_direction(name: &str, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|k| {
            let h = mix64(fnv1a64(format!("{name}#{k}").as_bytes()));
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordGroup {
    pub words: Vec<String>,
    /// Multiplier on the scenario separation; 0 makes the group pure noise.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclTask {
    pub demand: String,
    pub labels: Vec<String>,
}

/// Script for the mock backend.
///
/// Templates are literal text with `{group}` or `{group_a|group_b}`
/// placeholders, each replaced by a random word from a (randomly chosen)
/// group. `{theme}` resolves to one theme group chosen per completion, shared
/// by every label of that completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Fraction of completions emitted in an unparseable form.
    #[serde(default)]
    pub malformation_rate: f64,
    pub groups: BTreeMap<String, KeywordGroup>,
    pub labels: BTreeMap<String, Vec<String>>,
    /// Catch-all labels; their text is drawn from a scenario label that is
    /// not part of the requested label set.
    #[serde(default)]
    pub complement_labels: Vec<String>,
    #[serde(default)]
    pub themes: Vec<String>,
    #[serde(default)]
    pub icl_tasks: Vec<IclTask>,
    /// Artificial per-call latency, for concurrency tests.
    #[serde(default)]
    pub latency_ms: u64,
}

fn default_dim() -> usize {
    64
}

fn default_separation() -> f64 {
    3.0
}

fn group(words: &[&str], weight: f64) -> KeywordGroup {
    KeywordGroup {
        words: words.iter().map(|w| w.to_string()).collect(),
        weight,
    }
}

fn templates(ts: &[&str]) -> Vec<String> {
    ts.iter().map(|t| t.to_string()).collect()
}

const POSITIVE: &[&str] = &[
    "love",
    "wonderful",
    "delightful",
    "excellent",
    "great",
    "fantastic",
    "superb",
    "amazing",
    "charming",
    "brilliant",
    "lovely",
    "perfect",
];
const NEGATIVE: &[&str] = &[
    "hate",
    "terrible",
    "awful",
    "dreadful",
    "horrible",
    "disappointing",
    "poor",
    "miserable",
    "annoying",
    "broken",
    "useless",
    "ugly",
];
const FILLER: &[&str] = &[
    "really", "honestly", "truly", "quite", "today", "overall", "again", "finally", "somehow",
    "simply",
];

impl Scenario {
    pub fn builtin_names() -> &'static [&'static str] {
        &["separable2", "sentiment_topic", "planted8"]
    }

    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "separable2" => Some(Self::separable2()),
            "sentiment_topic" => Some(Self::sentiment_topic()),
            "planted8" => Some(Self::planted8()),
            _ => None,
        }
    }

    /// A built-in name or a path to a JSON scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Scenario, String> {
        if let Some(s) = Self::builtin(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(format!(
                "unknown mock scenario {name_or_path:?} (built-ins: {})",
                Self::builtin_names().join(", ")
            ));
        }
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }

    /// Two sentiment classes over a shared topic vocabulary.
    pub fn separable2() -> Scenario {
        let mut groups = BTreeMap::new();
        groups.insert("positive".into(), group(POSITIVE, 1.0));
        groups.insert("negative".into(), group(NEGATIVE, 1.0));
        groups.insert(
            "topic".into(),
            group(
                &[
                    "movie", "phone", "hotel", "meal", "book", "concert", "laptop", "game",
                    "course", "service", "trip", "app",
                ],
                0.0,
            ),
        );
        groups.insert("filler".into(), group(FILLER, 0.0));
        let mut labels = BTreeMap::new();
        labels.insert(
            "positive".into(),
            templates(&[
                "I {positive} this {topic}, {filler}.",
                "The {topic} was {positive} {filler}.",
                "{filler} a {positive} {topic} with a {positive} finish.",
            ]),
        );
        labels.insert(
            "negative".into(),
            templates(&[
                "I {negative} this {topic}, {filler}.",
                "The {topic} was {negative} {filler}.",
                "{filler} a {negative} {topic} with a {negative} finish.",
            ]),
        );
        Scenario {
            name: "separable2".into(),
            dim: 64,
            separation: 3.0,
            malformation_rate: 0.0,
            groups,
            labels,
            complement_labels: vec!["Other".into()],
            themes: vec![],
            icl_tasks: vec![IclTask {
                demand: "Classify product reviews by sentiment".into(),
                labels: vec!["positive".into(), "negative".into()],
            }],
            latency_ms: 0,
        }
    }

    /// Sentiment and topic attributes that combine freely, for conjunctive
    /// mining.
    pub fn sentiment_topic() -> Scenario {
        let mut groups = BTreeMap::new();
        groups.insert("positive".into(), group(POSITIVE, 1.0));
        groups.insert("negative".into(), group(NEGATIVE, 1.0));
        groups.insert(
            "food".into(),
            group(
                &[
                    "pizza", "pasta", "sushi", "burger", "salad", "dessert", "soup", "noodles",
                ],
                1.0,
            ),
        );
        groups.insert(
            "travel".into(),
            group(
                &[
                    "flight", "beach", "airport", "passport", "luggage", "cruise", "train",
                    "resort",
                ],
                1.0,
            ),
        );
        groups.insert(
            "chores".into(),
            group(
                &[
                    "meeting",
                    "homework",
                    "laundry",
                    "email",
                    "schedule",
                    "groceries",
                    "taxes",
                ],
                1.0,
            ),
        );
        groups.insert("filler".into(), group(FILLER, 0.0));
        let mut labels = BTreeMap::new();
        labels.insert(
            "positive".into(),
            templates(&[
                "The {food|travel|chores} was {positive} {filler}.",
                "{filler} {positive} {food|travel|chores}!",
            ]),
        );
        labels.insert(
            "negative".into(),
            templates(&[
                "The {food|travel|chores} was {negative} {filler}.",
                "{filler} {negative} {food|travel|chores}!",
            ]),
        );
        labels.insert(
            "food".into(),
            templates(&[
                "The {food} was {positive|negative} {filler}.",
                "{filler} {positive|negative} {food}!",
            ]),
        );
        labels.insert(
            "travel".into(),
            templates(&[
                "The {travel} was {positive|negative} {filler}.",
                "{filler} {positive|negative} {travel}!",
            ]),
        );
        labels.insert(
            "chores".into(),
            templates(&[
                "The {chores} was {positive|negative} {filler}.",
                "{filler} {positive|negative} {chores}!",
            ]),
        );
        Scenario {
            name: "sentiment_topic".into(),
            dim: 64,
            separation: 3.0,
            malformation_rate: 0.0,
            groups,
            labels,
            complement_labels: vec!["Other".into()],
            themes: vec![],
            icl_tasks: vec![
                IclTask {
                    demand: "Classify text messages by sentiment".into(),
                    labels: vec!["positive".into(), "negative".into()],
                },
                IclTask {
                    demand: "Classify text messages by what they talk about".into(),
                    labels: vec!["food".into(), "travel".into(), "chores".into()],
                },
            ],
            latency_ms: 0,
        }
    }

    /// Eight well-separated themes shared across both labels of a sample, so
    /// concatenated sample embeddings form eight planted clusters.
    pub fn planted8() -> Scenario {
        const THEMES: [&[&str]; 8] = [
            &["galaxy", "nebula", "telescope"],
            &["violin", "orchestra", "symphony"],
            &["glacier", "tundra", "permafrost"],
            &["mortgage", "dividend", "portfolio"],
            &["enzyme", "protein", "molecule"],
            &["volcano", "magma", "eruption"],
            &["chess", "gambit", "checkmate"],
            &["sourdough", "yeast", "oven"],
        ];
        let mut groups = BTreeMap::new();
        let mut themes = Vec::new();
        for (i, words) in THEMES.iter().enumerate() {
            let name = format!("theme{i}");
            groups.insert(name.clone(), group(words, 1.0));
            themes.push(name);
        }
        groups.insert("filler".into(), group(FILLER, 0.0));
        let mut labels = BTreeMap::new();
        labels.insert(
            "question".into(),
            templates(&[
                "What about the {theme}, {filler}?",
                "Why is the {theme} {filler} like that?",
            ]),
        );
        labels.insert(
            "answer".into(),
            templates(&[
                "The {theme} is {filler} fine.",
                "Because the {theme} says so, {filler}.",
            ]),
        );
        Scenario {
            name: "planted8".into(),
            dim: 64,
            separation: 30.0,
            malformation_rate: 0.0,
            groups,
            labels,
            complement_labels: vec![],
            themes,
            icl_tasks: vec![IclTask {
                demand: "Tell questions from answers".into(),
                labels: vec!["question".into(), "answer".into()],
            }],
            latency_ms: 0,
        }
    }

    pub fn with_malformation_rate(mut self, rate: f64) -> Self {
        self.malformation_rate = rate;
        self
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.malformation_rate) {
            return Err("malformation_rate must be in [0, 1]".into());
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err("separation must be finite and non-negative".into());
        }
        for (name, g) in &self.groups {
            if g.words.is_empty() {
                return Err(format!("group {name:?} has no words"));
            }
        }
        for t in &self.themes {
            if !self.groups.contains_key(t) {
                return Err(format!("theme {t:?} is not a group"));
            }
        }
        for (label, ts) in &self.labels {
            if ts.is_empty() {
                return Err(format!("label {label:?} has no templates"));
            }
            for t in ts {
                for alt in placeholders(t).iter().flatten() {
                    if alt == "theme" {
                        if self.themes.is_empty() {
                            return Err(format!(
                                "label {label:?} uses {{theme}} but no themes are set"
                            ));
                        }
                    } else if !self.groups.contains_key(alt) {
                        return Err(format!("label {label:?} references unknown group {alt:?}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Placeholder alternatives in template order.
fn placeholders(template: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push(
            rest[open + 1..open + close]
                .split('|')
                .map(|s| s.trim().to_string())
                .collect(),
        );
        rest = &rest[open + close + 1..];
    }
    out
}

/// How an unparseable completion is broken.
#[derive(Debug, Clone, Copy)]
enum Malformation {
    Truncated,
    DroppedLabel,
    UnquotedValue,
}

/// Offline backend driven by a [`Scenario`].
pub struct MockBackend {
    scenario: Scenario,
    seed: u64,
    model_name: String,
    directions: Vec<(f64, Vec<f64>)>,
    word_groups: HashMap<String, Vec<usize>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

struct InFlight<'a>(&'a MockBackend);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new(seed: u64, scenario: Scenario) -> Result<Self, GatewayError> {
        scenario.validate().map_err(GatewayError::InvalidRequest)?;
        let mut directions = Vec::new();
        let mut word_groups: HashMap<String, Vec<usize>> = HashMap::new();
        for (name, g) in &scenario.groups {
            let idx = directions.len();
            directions.push((g.weight, group_direction(name, scenario.dim)));
            for w in &g.words {
                for t in tokens(w) {
                    word_groups.entry(t).or_default().push(idx);
                }
            }
        }
        Ok(Self {
            model_name: format!("mock-{}", scenario.name),
            scenario,
            seed,
            directions,
            word_groups,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Highest number of simultaneous calls seen so far.
    pub fn max_observed_concurrency(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn enter(&self) -> InFlight<'_> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if self.scenario.latency_ms > 0 {
            thread::sleep(Duration::from_millis(self.scenario.latency_ms));
        }
        InFlight(self)
    }

    fn pool_key(&self, label: &str) -> Option<&str> {
        if let Some((k, _)) = self.scenario.labels.get_key_value(label) {
            return Some(k);
        }
        let lower = label.to_lowercase();
        let mut hits = self
            .scenario
            .labels
            .keys()
            .filter(|k| k.to_lowercase() == lower);
        match (hits.next(), hits.next()) {
            (Some(k), None) => Some(k),
            _ => None,
        }
    }

    fn is_complement(&self, label: &str) -> bool {
        let lower = label.to_lowercase();
        self.scenario
            .complement_labels
            .iter()
            .any(|c| c.to_lowercase() == lower)
    }

    /// Renders one text for `label`. `siblings` is the full requested label
    /// set, used to pick a donor pool for complement labels.
    pub fn sample_label_text(
        &self,
        label: &str,
        siblings: &[String],
        theme: Option<&str>,
        rng: &mut ChaCha8Rng,
    ) -> Result<String, GatewayError> {
        let key = if let Some(k) = self.pool_key(label) {
            k.to_string()
        } else if self.is_complement(label) {
            let donors: Vec<&String> = self
                .scenario
                .labels
                .keys()
                .filter(|k| {
                    !self.is_complement(k)
                        && !siblings
                            .iter()
                            .any(|s| s.to_lowercase() == k.to_lowercase())
                })
                .collect();
            match donors.choose(rng) {
                Some(d) => (*d).clone(),
                None => return Err(GatewayError::UnknownScenarioLabel(label.to_string())),
            }
        } else {
            return Err(GatewayError::UnknownScenarioLabel(label.to_string()));
        };
        let template = self.scenario.labels[&key]
            .choose(rng)
            .expect("validated non-empty")
            .clone();
        Ok(self.fill(&template, theme, rng))
    }

    fn fill(&self, template: &str, theme: Option<&str>, rng: &mut ChaCha8Rng) -> String {
        let mut out = String::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else {
                break;
            };
            out.push_str(&rest[..open]);
            let alts: Vec<&str> = rest[open + 1..open + close]
                .split('|')
                .map(str::trim)
                .collect();
            let mut g = *alts.choose(rng).expect("non-empty split");
            if g == "theme" {
                g = theme.expect("validated: theme templates need themes");
            }
            let word = self.scenario.groups[g]
                .words
                .choose(rng)
                .expect("validated");
            out.push_str(word);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        out
    }

    fn choose_theme(&self, rng: &mut ChaCha8Rng) -> Option<String> {
        self.scenario.themes.choose(rng).cloned()
    }

    /// Raw mock embedding: hashed trigrams plus keyword-group offsets.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = hash_embedding(text, self.scenario.dim);
        for tok in tokens(text) {
            if let Some(groups) = self.word_groups.get(&tok) {
                for &g in groups {
                    let (weight, dir) = &self.directions[g];
                    let scale = self.scenario.separation * weight;
                    if scale != 0.0 {
                        v.iter_mut().zip(dir).for_each(|(x, d)| *x += scale * d);
                    }
                }
            }
        }
        v
    }

    /// Whether the completion with schedule index `i` is malformed. Spreads
    /// malformed outputs evenly so any run of consecutive indices contains
    /// `floor` or `ceil` of `len * rate` of them.
    fn scheduled_malformed(&self, i: u64) -> bool {
        let r = self.scenario.malformation_rate;
        let i = (i % (1 << 40)) as f64;
        ((i + 1.0) * r).floor() > (i * r).floor()
    }

    fn rng_for(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut buf = self.seed.to_le_bytes().to_vec();
        for p in parts {
            buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
            buf.extend_from_slice(p);
        }
        ChaCha8Rng::seed_from_u64(fnv1a64(&buf))
    }

    fn render_dict(labels: &[String], texts: &[String]) -> Vec<String> {
        labels
            .iter()
            .zip(texts)
            .map(|(l, t)| {
                let mut e = String::new();
                crate::parse::push_quoted(&mut e, l);
                e.push_str(": ");
                crate::parse::push_quoted(&mut e, t);
                e
            })
            .collect()
    }

    fn emit_dict(entries: Vec<String>, broken: Option<Malformation>) -> String {
        match broken {
            None => format!("{{{}}}", entries.join(", ")),
            Some(Malformation::DroppedLabel) => {
                let keep = &entries[..entries.len() - 1];
                format!("{{{}}}", keep.join(", "))
            }
            Some(Malformation::UnquotedValue) => {
                let mut entries = entries;
                let first = &entries[0];
                let colon = first.find("\": ").expect("rendered entry") + 3;
                let bare = first[colon..].trim_matches('"').replace('"', "");
                entries[0] = format!("{}{}", &first[..colon], bare);
                format!("{{{}}}", entries.join(", "))
            }
            Some(Malformation::Truncated) => {
                let full = format!("{{{}}}", entries.join(", "));
                let mut cut = full.len() * 3 / 5;
                while !full.is_char_boundary(cut) {
                    cut -= 1;
                }
                full[..cut].to_string()
            }
        }
    }

    fn pick_malformation(rng: &mut ChaCha8Rng) -> Malformation {
        match rng.random_range(0..3) {
            0 => Malformation::Truncated,
            1 => Malformation::DroppedLabel,
            _ => Malformation::UnquotedValue,
        }
    }

    fn complete_instruction(
        &self,
        req: &GenerationRequest,
        labels: &[String],
    ) -> Result<String, GatewayError> {
        let seed_bytes = req.seed().unwrap_or_default().to_le_bytes();
        let label_bytes = labels.join("\u{0}");
        let mut rng = match req.seed() {
            Some(_) => self.rng_for(&[b"gen", label_bytes.as_bytes(), &seed_bytes]),
            None => self.rng_for(&[b"gen", req.last_user_message().as_bytes()]),
        };
        let schedule = req
            .seed()
            .unwrap_or_else(|| fnv1a64(req.last_user_message().as_bytes()));
        let theme = self.choose_theme(&mut rng);
        let texts = labels
            .iter()
            .map(|l| self.sample_label_text(l, labels, theme.as_deref(), &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let broken = self
            .scheduled_malformed(schedule)
            .then(|| Self::pick_malformation(&mut rng));
        Ok(Self::emit_dict(Self::render_dict(labels, &texts), broken))
    }

    fn complete_icl(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        let mut transcript = Vec::new();
        for m in req.messages() {
            transcript.extend_from_slice(m.content.as_bytes());
            transcript.push(0);
        }
        let seed_bytes = req.seed().unwrap_or_default().to_le_bytes();
        let mut rng = self.rng_for(&[b"icl", &transcript, &seed_bytes]);
        let schedule = req.seed().unwrap_or_else(|| fnv1a64(&transcript));
        let (demand, labels) = match self.scenario.icl_tasks.choose(&mut rng) {
            Some(t) => (t.demand.clone(), t.labels.clone()),
            None => {
                let all: Vec<String> = self
                    .scenario
                    .labels
                    .keys()
                    .filter(|k| !self.is_complement(k))
                    .cloned()
                    .collect();
                let take = 2.min(all.len());
                let labels: Vec<String> = all.choose_multiple(&mut rng, take).cloned().collect();
                (format!("Classify texts as {}", labels.join(" or ")), labels)
            }
        };
        let theme = self.choose_theme(&mut rng);
        let texts = labels
            .iter()
            .map(|l| self.sample_label_text(l, &labels, theme.as_deref(), &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let broken = self
            .scheduled_malformed(schedule)
            .then(|| Self::pick_malformation(&mut rng));
        let instruction = crate::model::validate_instruction(&demand, &labels)
            .map_err(|e| GatewayError::InvalidRequest(format!("scenario ICL task: {e}")))?;
        Ok(crate::prompt::render_icl_reply(
            &instruction,
            &Self::emit_dict(Self::render_dict(&labels, &texts), broken),
        ))
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        let _guard = self.enter();
        let prompt = req.last_user_message();
        if prompt == ICL_USER_MESSAGE {
            return self.complete_icl(req);
        }
        match parse_rendered_instruction(prompt) {
            Some((_, labels)) => self.complete_instruction(req, &labels),
            None => Err(GatewayError::InvalidRequest(
                "mock backend cannot interpret this prompt".into(),
            )),
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let _guard = self.enter();
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Message, Role};
    use crate::model::validate_instruction;
    use crate::parse::parse_sample;
    use crate::prompt::{generation_request, Sampling};
    use std::sync::Arc;

    #[test]
    fn builtins_validate() {
        for name in Scenario::builtin_names() {
            Scenario::builtin(name).unwrap().validate().unwrap();
        }
        assert!(Scenario::resolve("nope").is_err());
    }

    #[test]
    fn identical_requests_identical_text() {
        let m = MockBackend::new(7, Scenario::separable2()).unwrap();
        let i = validate_instruction("sentiment", &["positive", "negative"]).unwrap();
        let r = generation_request(&i, Sampling::default(), 7);
        let a = m.complete(&r).unwrap();
        assert_eq!(a, m.complete(&r).unwrap());
        let other = generation_request(&i, Sampling::default(), 8);
        assert_ne!(a, m.complete(&other).unwrap());
    }

    #[test]
    fn unknown_label_is_reported() {
        let m = MockBackend::new(0, Scenario::separable2()).unwrap();
        let i = validate_instruction("x", &["positive", "sports"]).unwrap();
        let r = generation_request(&i, Sampling::default(), 0);
        assert_eq!(
            m.complete(&r),
            Err(GatewayError::UnknownScenarioLabel("sports".into()))
        );
    }

    #[test]
    fn well_formed_rate_is_exact() {
        for rate in [0.0, 0.25, 0.5, 1.0] {
            let m =
                MockBackend::new(3, Scenario::separable2().with_malformation_rate(rate)).unwrap();
            let i = validate_instruction("sentiment", &["positive", "negative"]).unwrap();
            let ok = (0..200)
                .filter(|s| {
                    let raw = m
                        .complete(&generation_request(&i, Sampling::default(), *s))
                        .unwrap();
                    let rep = parse_sample(&raw, &i);
                    if rate == 0.0 {
                        assert!(rep.repairs.is_empty());
                    }
                    rep.is_ok()
                })
                .count();
            assert_eq!(ok as f64, 200.0 * (1.0 - rate), "rate {rate}");
        }
    }

    #[test]
    fn complement_label_draws_from_other_pools() {
        let m = MockBackend::new(1, Scenario::sentiment_topic()).unwrap();
        let i = validate_instruction("x", &["food", "Other"]).unwrap();
        for s in 0..20 {
            let raw = m
                .complete(&generation_request(&i, Sampling::default(), s))
                .unwrap();
            assert!(parse_sample(&raw, &i).is_ok());
        }
    }

    #[test]
    fn unrecognized_prompt_is_rejected() {
        let m = MockBackend::new(1, Scenario::separable2()).unwrap();
        let r =
            GenerationRequest::new(vec![Message::new(Role::User, "hello")], 0.0, 8, None).unwrap();
        assert!(matches!(
            m.complete(&r),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn concurrency_bound_is_enforced() {
        let m = Arc::new(MockBackend::new(1, Scenario::separable2().with_latency_ms(5)).unwrap());
        let g = Gateway::mock(m.clone(), 3);
        let i = validate_instruction("sentiment", &["positive", "negative"]).unwrap();
        let reqs: Vec<_> = (0..24)
            .map(|s| generation_request(&i, Sampling::default(), s))
            .collect();
        let out = g.complete_all(&reqs);
        assert!(out.iter().all(Result::is_ok));
        assert!(m.max_observed_concurrency() <= 3);
        assert!(
            m.max_observed_concurrency() >= 2,
            "fan-out should overlap calls"
        );
        // concurrency never changes what comes back
        let serial = Gateway::mock(
            Arc::new(MockBackend::new(1, Scenario::separable2()).unwrap()),
            1,
        );
        assert_eq!(out, serial.complete_all(&reqs));
    }
}
