use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use incubator_core::diversify::generate_pool;
use incubator_core::incubate::{generate_dataset_with, write_dataset_jsonl, GenerationOptions};
use incubator_core::mining::{
    load_eval_set, load_judgments, robustness_sweep, size_sweep, sweep_csv, SweepPoint,
};
use incubator_core::probe::classifier_to_string;
use incubator_core::prompt::{target_vs_other_demand, OTHER_LABEL};
use incubator_core::tuning::{corpus_to_jsonl, import_tuning_corpus};
use incubator_core::*;
use serde_json::{json, Map, Value};

use crate::cli::*;
use crate::config::AppConfig;
use crate::error::CliError;
use crate::workspace::{bytes_hash, file_hash, RegistryEntry, Workspace};

/// What a command reports: JSON fields plus the equivalent text lines.
#[derive(Debug, Default)]
pub struct Report {
    pub fields: Map<String, Value>,
    pub lines: Vec<String>,
}

impl Report {
    fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.insert(key.to_string(), value.into());
    }

    fn line(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

pub struct Context {
    pub cfg: AppConfig,
    pub seed: u64,
    pub mock: Option<Scenario>,
    pub ws: Workspace,
    timings: RefCell<Vec<(String, f64)>>,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self, CliError> {
        let cfg = AppConfig::load(cli.config.as_deref())?;
        let mock = cli
            .mock
            .as_deref()
            .map(Scenario::resolve)
            .transpose()
            .map_err(CliError::user)?;
        let ws = Workspace::open(cli.workspace.as_deref().unwrap_or(&cfg.workspace))?;
        Ok(Self {
            seed: cli.seed.unwrap_or(cfg.defaults.seed),
            cfg,
            mock,
            ws,
            timings: RefCell::new(Vec::new()),
        })
    }

    /// Seconds per phase, summed over repeats, in first-seen order.
    pub fn timings(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for (name, secs) in self.timings.borrow().iter() {
            match out.iter_mut().find(|(n, _)| n == name) {
                Some((_, total)) => *total += secs,
                None => out.push((name.clone(), *secs)),
            }
        }
        out
    }

    fn timed<T>(&self, phase: &str, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        self.timings
            .borrow_mut()
            .push((phase.to_string(), started.elapsed().as_secs_f64()));
        out
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        if let Some(s) = &self.mock {
            let backend = MockBackend::new(self.seed, s.clone())?;
            return Ok(Gateway::mock(Arc::new(backend), self.cfg.mock_concurrency));
        }
        match (&self.cfg.generation, &self.cfg.embedding) {
            (Some(g), Some(e)) => Ok(Gateway::http(g, e)?),
            _ => Err(CliError::user(
                "no backend configured: pass --mock or set [generation] and [embedding] in --config",
            )),
        }
    }

    /// Identifies the models behind generated content.
    fn backend_key(&self) -> Value {
        match &self.mock {
            Some(s) => json!({
                "mock": s.name,
                "scenario": bytes_hash(serde_json::to_string(s).unwrap_or_default().as_bytes()),
            }),
            None => json!({
                "generation": self.cfg.generation.as_ref().map(|c| c.model_name.clone()),
                "embedding": self.cfg.embedding.as_ref().map(|c| c.model_name.clone()),
            }),
        }
    }

    fn options(&self) -> GenerationOptions {
        GenerationOptions {
            sampling: self.cfg.sampling(),
            ..GenerationOptions::default()
        }
    }

    fn train_config(&self, args: &TrainArgs) -> Result<TrainConfig, CliError> {
        let mut c = self.cfg.training;
        c.seed = self.seed;
        if let Some(v) = args.epochs {
            c.epochs = v;
        }
        if let Some(v) = args.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = args.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = args.holdout_fraction {
            c.holdout_fraction = v;
        }
        c.validate().map_err(CliError::from)?;
        Ok(c)
    }

    fn display(&self, path: &Path) -> String {
        path.display().to_string()
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("incubator: {}", msg.as_ref());
}

fn instruction(task: &TaskArgs) -> Result<Instruction, CliError> {
    match (&task.target, task.labels.is_empty()) {
        (Some(target), _) => {
            let demand = task
                .demand
                .clone()
                .unwrap_or_else(|| target_vs_other_demand(target));
            Ok(validate_instruction(
                &demand,
                &[target.as_str(), OTHER_LABEL],
            )?)
        }
        (None, false) => {
            let demand = task
                .demand
                .as_deref()
                .ok_or_else(|| CliError::user("--demand is required with --labels"))?;
            Ok(validate_instruction(demand, &task.labels)?)
        }
        (None, true) => Err(CliError::user("pass --labels or --target")),
    }
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        return Err(CliError::user(format!("--{name} must be at least 1")));
    }
    Ok(v)
}

fn dataset_key(ctx: &Context, instr: &Instruction, count: usize) -> Value {
    let s = ctx.cfg.sampling();
    json!({
        "kind": "dataset",
        "instruction": instr.id(),
        "demand": instr.demand(),
        "labels": instr.labels(),
        "count": count,
        "seed": ctx.seed,
        "backend": ctx.backend_key(),
        "temperature": s.temperature,
        "max_tokens": s.max_tokens,
    })
}

fn label_counts(dataset: &IncubationDataset) -> Value {
    let labels = dataset.instruction().labels();
    let counts: Map<String, Value> = labels
        .iter()
        .zip(dataset.label_counts())
        .map(|(l, c)| (l.clone(), c.into()))
        .collect();
    Value::Object(counts)
}

/// Generates and saves a dataset; returns it with its path.
fn generate_into(
    ctx: &Context,
    gw: &Gateway,
    instr: &Instruction,
    count: usize,
) -> Result<(IncubationDataset, PathBuf), CliError> {
    let path = ctx
        .ws
        .artifact_path("dataset", "jsonl", &dataset_key(ctx, instr, count));
    log(format!(
        "generating {count} samples for {:?}",
        instr.demand()
    ));
    let dataset = ctx.timed("generation", || {
        generate_dataset_with(instr, count, gw, ctx.seed, ctx.options())
    })?;
    let mut buf = Vec::new();
    write_dataset_jsonl(&dataset, &mut buf)?;
    ctx.ws.write(&path, &buf)?;
    Ok((dataset, path))
}

struct Incubated {
    dataset: IncubationDataset,
    dataset_path: PathBuf,
    classifier: IncubatedClassifier,
    classifier_path: PathBuf,
}

fn incubate_into(
    ctx: &Context,
    gw: &Gateway,
    instr: &Instruction,
    count: usize,
    train: &TrainConfig,
) -> Result<Incubated, CliError> {
    let (dataset, dataset_path) = generate_into(ctx, gw, instr, count)?;
    log(format!("training on {} examples", dataset.examples().len()));
    let classifier = ctx.timed("training", || train_classifier(&dataset, train, gw))?;
    let key = json!({
        "kind": "classifier",
        "dataset": dataset_key(ctx, instr, count),
        "train": train,
    });
    let classifier_path = ctx.ws.artifact_path("classifier", "json", &key);
    let text = classifier_to_string(&classifier);
    ctx.ws.write(&classifier_path, text.as_bytes())?;
    Ok(Incubated {
        dataset,
        dataset_path,
        classifier,
        classifier_path,
    })
}

pub fn build_corpus(ctx: &Context, args: &BuildCorpusArgs) -> Result<Report, CliError> {
    let descriptors = DatasetDescriptor::load_all(&args.descriptors)?;
    let seeds = build_seed_pairs(
        &descriptors,
        positive("per-class", args.per_class)?,
        ctx.seed,
    )?;
    let mut pairs = seeds.clone();
    if args.augment > 0 {
        let gw = ctx.gateway()?;
        log(format!("augmenting with {} in-context pairs", args.augment));
        let extra = ctx.timed("augmentation", || {
            augment_icl(&seeds, args.augment, &gw, ctx.seed)
        })?;
        pairs.extend(extra);
    }
    let corpus = TuningCorpus::new(pairs);
    let key = json!({
        "kind": "corpus",
        "seed_pairs": bytes_hash(corpus_to_jsonl(&TuningCorpus::new(seeds.clone())).as_bytes()),
        "augment": args.augment,
        "seed": ctx.seed,
        "backend": if args.augment > 0 { ctx.backend_key() } else { Value::Null },
    });
    let path = ctx.ws.artifact_path("corpus", "jsonl", &key);
    export_tuning_corpus(&corpus, &path)?;

    let mut r = Report::default();
    let stats: Map<String, Value> = corpus
        .stats()
        .into_iter()
        .map(|(p, n)| (p.to_string(), n.into()))
        .collect();
    r.set("corpus", ctx.display(&path));
    r.set("datasets", descriptors.len());
    r.set("pairs", corpus.pairs.len());
    r.set("provenance", Value::Object(stats.clone()));
    r.line(format!("corpus: {}", ctx.display(&path)));
    r.line(format!(
        "pairs: {} from {} datasets",
        corpus.pairs.len(),
        descriptors.len()
    ));
    for (p, n) in stats {
        r.line(format!("  {p}: {n}"));
    }
    Ok(r)
}

pub fn diversify(ctx: &Context, args: &DiversifyArgs) -> Result<Report, CliError> {
    let instr = instruction(&args.task)?;
    let pool_size = positive("pool", args.pool.unwrap_or(ctx.cfg.defaults.pool))?;
    let k = positive("k", args.k.unwrap_or(ctx.cfg.defaults.k))?;
    let base = match &args.corpus {
        Some(p) => import_tuning_corpus(p)?.pairs,
        None => Vec::new(),
    };
    let gw = ctx.gateway()?;
    log(format!("generating a pool of {pool_size}"));
    let pool = ctx.timed("generation", || {
        generate_pool(&instr, pool_size, &gw, ctx.cfg.sampling(), ctx.seed)
    })?;
    log(format!(
        "clustering {} parsed samples into {k}",
        pool.samples.len()
    ));
    let d = ctx.timed("clustering", || {
        build_diversification_batches(&instr, &pool.samples, k, &gw, ctx.seed)
    })?;
    let kept = d.pairs.len();
    let batch = d.pairs.first().and_then(|p| p.batch_id.clone());
    let mut pairs = base;
    let appended_to = pairs.len();
    pairs.extend(d.pairs);
    let s = ctx.cfg.sampling();
    let key = json!({
        "kind": "diversified",
        "instruction": instr.id(),
        "pool": pool_size,
        "k": k,
        "seed": ctx.seed,
        "backend": ctx.backend_key(),
        "temperature": s.temperature,
        "max_tokens": s.max_tokens,
        "base": match &args.corpus { Some(p) => Value::String(file_hash(p)?), None => Value::Null },
    });
    let path = ctx.ws.artifact_path("diversified", "jsonl", &key);
    export_tuning_corpus(&TuningCorpus::new(pairs), &path)?;

    let mut r = Report::default();
    r.set("corpus", ctx.display(&path));
    r.set("instruction_id", instr.id());
    r.set("pool_requested", pool.attempted);
    r.set("pool_parsed", pool.samples.len());
    r.set("representatives", kept);
    r.set("base_pairs", appended_to);
    r.set("sse", d.clustering.sse);
    r.set("batch_id", batch.clone());
    r.line(format!("corpus: {}", ctx.display(&path)));
    r.line(format!(
        "pool: {} parsed of {} requested",
        pool.samples.len(),
        pool.attempted
    ));
    r.line(format!(
        "representatives: {kept} (batch {}), sse {:.6}",
        batch.unwrap_or_default(),
        d.clustering.sse
    ));
    if appended_to > 0 {
        r.line(format!("appended to {appended_to} existing pairs"));
    }
    Ok(r)
}

pub fn generate(ctx: &Context, args: &GenerateArgs) -> Result<Report, CliError> {
    let instr = instruction(&args.task)?;
    let count = positive("count", args.count.unwrap_or(ctx.cfg.defaults.count))?;
    let gw = ctx.gateway()?;
    let (dataset, path) = generate_into(ctx, &gw, &instr, count)?;
    let mut r = Report::default();
    r.set("dataset", ctx.display(&path));
    r.set("instruction_id", instr.id());
    r.set("requested", count);
    r.set("kept", dataset.kept());
    r.set("label_counts", label_counts(&dataset));
    r.line(format!("dataset: {}", ctx.display(&path)));
    r.line(format!("kept {} of {count} sample sets", dataset.kept()));
    Ok(r)
}

pub fn incubate(ctx: &Context, args: &IncubateArgs) -> Result<Report, CliError> {
    let instr = instruction(&args.task)?;
    let count = positive("count", args.count.unwrap_or(ctx.cfg.defaults.count))?;
    let train = ctx.train_config(&args.train)?;
    let register_target = match &args.register_label {
        Some(l) => {
            if instr.label_index(l).is_none() {
                return Err(CliError::user(format!(
                    "--register-label {l:?} is not a label"
                )));
            }
            l.clone()
        }
        None => instr.labels()[0].clone(),
    };
    let gw = ctx.gateway()?;
    let out = incubate_into(ctx, &gw, &instr, count, &train)?;
    if let Some(name) = &args.register {
        let mut reg = ctx.ws.load_registry()?;
        reg.insert(
            name.clone(),
            RegistryEntry {
                classifier: ctx.ws.relative(&out.classifier_path),
                target: register_target.clone(),
            },
        );
        ctx.ws.save_registry(&reg)?;
    }

    let m = &out.classifier.metadata;
    let mut r = Report::default();
    r.set("dataset", ctx.display(&out.dataset_path));
    r.set("classifier", ctx.display(&out.classifier_path));
    r.set("instruction_id", instr.id());
    r.set("requested", count);
    r.set("kept", out.dataset.kept());
    r.set("label_counts", label_counts(&out.dataset));
    r.set("holdout_accuracy", m.holdout_accuracy);
    r.set("final_train_loss", m.final_train_loss);
    r.set("registered", args.register.clone());
    r.line(format!("dataset: {}", ctx.display(&out.dataset_path)));
    r.line(format!("classifier: {}", ctx.display(&out.classifier_path)));
    r.line(format!(
        "kept {} of {count} sample sets",
        out.dataset.kept()
    ));
    match m.holdout_accuracy {
        Some(a) => r.line(format!(
            "holdout accuracy: {a:.4} ({} examples)",
            m.holdout_size
        )),
        None => r.line("holdout accuracy: n/a (no holdout)"),
    }
    r.line(format!("final train loss: {:.6}", m.final_train_loss));
    if let Some(name) = &args.register {
        r.line(format!(
            "registered as {name:?} scoring {register_target:?}"
        ));
    }
    Ok(r)
}

/// Classifier artifact bound to a label.
struct Bound {
    path: PathBuf,
    classifier: IncubatedClassifier,
    target: String,
}

fn load_bound(path: PathBuf, target: Option<String>) -> Result<Bound, CliError> {
    let classifier =
        load_classifier(&path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
    let target = target.unwrap_or_else(|| classifier.instruction.labels()[0].clone());
    if classifier.instruction.label_index(&target).is_none() {
        return Err(CliError::user(format!(
            "{}: no label {target:?}",
            path.display()
        )));
    }
    Ok(Bound {
        path,
        classifier,
        target,
    })
}

fn parse_binding(s: &str) -> Result<(String, PathBuf, Option<String>), CliError> {
    let (name, rest) = s
        .split_once('=')
        .ok_or_else(|| CliError::user(format!("--operand {s:?}: expected NAME=PATH[#LABEL]")))?;
    let (path, label) = match rest.rsplit_once('#') {
        Some((p, l)) => (p, Some(l.to_string())),
        None => (rest, None),
    };
    if name.is_empty() || path.is_empty() {
        return Err(CliError::user(format!(
            "--operand {s:?}: expected NAME=PATH[#LABEL]"
        )));
    }
    Ok((name.to_string(), PathBuf::from(path), label))
}

pub fn mine(ctx: &Context, args: &MineArgs) -> Result<Report, CliError> {
    let k = positive("k", args.k.unwrap_or(ctx.cfg.defaults.k_mine))?;
    let count = positive("count", args.count.unwrap_or(ctx.cfg.defaults.count))?;
    let corpus = Corpus::load(&args.corpus)?;
    let gw = ctx.gateway()?;
    let mut r = Report::default();

    // name -> classifier; "" is the single-classifier query.
    let mut bound: BTreeMap<String, Bound> = BTreeMap::new();
    let mut incubated: Vec<String> = Vec::new();
    let mut expr: Option<Expr> = None;
    let query_text;
    if let Some(path) = &args.classifier {
        let b = load_bound(path.clone(), args.label.clone())?;
        query_text = b.target.clone();
        bound.insert(String::new(), b);
    } else if let Some(src) = &args.logic {
        let e = parse_query(src)?;
        query_text = e.to_string();
        if args.direct {
            let train = ctx.train_config(&args.train)?;
            let instr = validate_instruction(
                &target_vs_other_demand(&query_text),
                &[query_text.as_str(), OTHER_LABEL],
            )?;
            let out = incubate_into(ctx, &gw, &instr, count, &train)?;
            incubated.push(ctx.display(&out.classifier_path));
            bound.insert(
                String::new(),
                Bound {
                    path: out.classifier_path,
                    classifier: out.classifier,
                    target: query_text.clone(),
                },
            );
        } else {
            let mut explicit = HashMap::new();
            for b in &args.operands {
                let (name, path, label) = parse_binding(b)?;
                explicit.insert(name, (path, label));
            }
            let mut registry = ctx.ws.load_registry()?;
            let mut registry_changed = false;
            let names: Vec<String> = e.operands().into_iter().map(str::to_string).collect();
            for name in names {
                let b = if let Some((path, label)) = explicit.remove(&name) {
                    load_bound(path, label)?
                } else if let Some(entry) = registry.get(&name) {
                    load_bound(
                        ctx.ws.resolve(&entry.classifier),
                        Some(entry.target.clone()),
                    )?
                } else if args.auto_incubate {
                    let train = ctx.train_config(&args.train)?;
                    let instr = validate_instruction(
                        &target_vs_other_demand(&name),
                        &[name.as_str(), OTHER_LABEL],
                    )?;
                    let out = incubate_into(ctx, &gw, &instr, count, &train)?;
                    registry.insert(
                        name.clone(),
                        RegistryEntry {
                            classifier: ctx.ws.relative(&out.classifier_path),
                            target: name.clone(),
                        },
                    );
                    registry_changed = true;
                    incubated.push(ctx.display(&out.classifier_path));
                    Bound {
                        path: out.classifier_path,
                        classifier: out.classifier,
                        target: name.clone(),
                    }
                } else {
                    return Err(CliError::user(format!(
                        "operand {name:?} is not registered; bind it with --operand or pass --auto-incubate"
                    )));
                };
                bound.insert(name, b);
            }
            if let Some(extra) = explicit.keys().next() {
                return Err(CliError::user(format!(
                    "--operand {extra:?} does not appear in the query"
                )));
            }
            if registry_changed {
                ctx.ws.save_registry(&registry)?;
            }
            expr = Some(e);
        }
    } else {
        return Err(CliError::user("pass --classifier or --logic"));
    }

    log(format!("scoring {} documents", corpus.len()));
    let scored = ctx.timed("scoring", || -> Result<_, CliError> {
        let s = match &expr {
            None => {
                let b = &bound[""];
                score_corpus(
                    &Query::Classifier(Scorer::new(&b.classifier, &b.target)?),
                    &corpus,
                    &gw,
                )?
            }
            Some(e) => {
                let mut scorers = HashMap::new();
                for (name, b) in &bound {
                    scorers.insert(name.clone(), Scorer::new(&b.classifier, &b.target)?);
                }
                score_corpus(
                    &Query::Logic {
                        expr: e,
                        operands: &scorers,
                    },
                    &corpus,
                    &gw,
                )?
            }
        };
        Ok(s)
    })?;
    let result = top_k(&scored, k, query_text.clone());

    let texts: HashMap<&DocId, &str> = corpus
        .documents()
        .iter()
        .map(|d| (&d.id, d.text.as_str()))
        .collect();
    let mut out = String::new();
    for (i, s) in result.ranked.iter().enumerate() {
        let line =
            json!({"rank": i + 1, "id": s.doc_id, "score": s.score, "text": texts[&s.doc_id]});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let mut classifier_hashes = Map::new();
    for (name, b) in &bound {
        classifier_hashes.insert(
            name.clone(),
            json!({"classifier": file_hash(&b.path)?, "target": b.target}),
        );
    }
    let key = json!({
        "kind": "mined",
        "query": query_text,
        "direct": args.direct,
        "classifiers": classifier_hashes,
        "corpus": file_hash(&args.corpus)?,
        "k": k,
    });
    let path = ctx.ws.artifact_path("mined", "jsonl", &key);
    ctx.ws.write(&path, out.as_bytes())?;

    r.set("mined", ctx.display(&path));
    r.set("query", query_text.clone());
    r.set("documents", corpus.len());
    r.set("returned", result.ranked.len());
    r.set("incubated", incubated.clone());
    r.line(format!("mined: {}", ctx.display(&path)));
    r.line(format!(
        "query {query_text:?}: {} of {} documents",
        result.ranked.len(),
        corpus.len()
    ));
    for c in &incubated {
        r.line(format!("incubated: {c}"));
    }
    if let Some(j) = &args.judgments {
        let p = precision_at_k(&result, &load_judgments(j)?)?;
        r.set("precision_at_k", p);
        r.line(format!("precision@{}: {p:.4}", result.ranked.len()));
    }
    Ok(r)
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<Report, CliError> {
    let clf = load_classifier(&args.classifier)
        .map_err(|e| CliError::user(format!("{}: {e}", args.classifier.display())))?;
    let set = load_eval_set(&args.data)?;
    let gw = ctx.gateway()?;
    let acc = ctx.timed("evaluation", || accuracy_eval(&clf, &set, &gw))?;
    let key = json!({
        "kind": "eval",
        "classifier": file_hash(&args.classifier)?,
        "data": file_hash(&args.data)?,
        "backend": ctx.backend_key(),
    });
    let path = ctx.ws.artifact_path("eval", "json", &key);
    let doc = json!({
        "instruction_id": clf.instruction.id(),
        "examples": set.len(),
        "accuracy": acc,
    });
    ctx.ws.write(&path, format!("{doc:#}\n").as_bytes())?;
    let mut r = Report::default();
    r.set("report", ctx.display(&path));
    r.set("examples", set.len());
    r.set("accuracy", acc);
    r.line(format!("report: {}", ctx.display(&path)));
    r.line(format!("accuracy: {acc:.4} on {} examples", set.len()));
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn sweep_outputs(
    ctx: &Context,
    r: &mut Report,
    kind: &str,
    key_name: &str,
    key: Value,
    points: &[SweepPoint],
    extra: Value,
    csv_path: Option<&Path>,
) -> Result<(), CliError> {
    let deterministic: Vec<Value> = points
        .iter()
        .map(|p| json!({ key_name: p.key, "accuracy": p.accuracy }))
        .collect();
    let mut doc = json!({ "points": deterministic });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    let path = ctx.ws.artifact_path(kind, "json", &key);
    ctx.ws.write(&path, format!("{doc:#}\n").as_bytes())?;
    let csv = sweep_csv(key_name, points);
    if let Some(p) = csv_path {
        std::fs::write(p, &csv)
            .map_err(|e| CliError::user(format!("cannot write {}: {e}", p.display())))?;
        r.set("csv", ctx.display(p));
    }
    r.set("report", ctx.display(&path));
    r.set(
        "points",
        serde_json::to_value(points).map_err(|e| CliError::internal(e.to_string()))?,
    );
    r.line(format!("report: {}", ctx.display(&path)));
    r.lines.extend(csv.lines().map(str::to_string));
    Ok(())
}

pub fn sweep_size(ctx: &Context, args: &SweepSizeArgs) -> Result<Report, CliError> {
    let instr = instruction(&args.task)?;
    let train = ctx.train_config(&args.train)?;
    let eval = load_eval_set(&args.eval)?;
    let gw = ctx.gateway()?;
    log(format!("size sweep over {:?}", args.sizes));
    let points = ctx.timed("sweep", || {
        size_sweep(&instr, &args.sizes, &gw, &eval, ctx.seed, &train)
    })?;
    let key = json!({
        "kind": "sweep-size",
        "instruction": instr.id(),
        "sizes": args.sizes,
        "eval": file_hash(&args.eval)?,
        "seed": ctx.seed,
        "train": train,
        "backend": ctx.backend_key(),
    });
    let mut r = Report::default();
    let extra = json!({"instruction_id": instr.id()});
    sweep_outputs(
        ctx,
        &mut r,
        "sweep-size",
        "size",
        key,
        &points,
        extra,
        args.csv.as_deref(),
    )?;
    Ok(r)
}

pub fn sweep_robustness(ctx: &Context, args: &SweepRobustnessArgs) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(&args.paraphrases)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", args.paraphrases.display())))?;
    let paraphrases = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|d| validate_instruction(d, &args.labels))
        .collect::<Result<Vec<_>, _>>()?;
    if paraphrases.is_empty() {
        return Err(CliError::user("paraphrase file has no demands"));
    }
    let count = positive("count", args.count.unwrap_or(ctx.cfg.defaults.count))?;
    let train = ctx.train_config(&args.train)?;
    let eval = load_eval_set(&args.eval)?;
    let gw = ctx.gateway()?;
    log(format!(
        "robustness sweep over {} paraphrases",
        paraphrases.len()
    ));
    let report = ctx.timed("sweep", || {
        robustness_sweep(&paraphrases, count, &gw, &eval, ctx.seed, &train)
    })?;
    let ids: Vec<&str> = paraphrases.iter().map(|p| p.id()).collect();
    let key = json!({
        "kind": "sweep-robustness",
        "instructions": ids,
        "count": count,
        "eval": file_hash(&args.eval)?,
        "seed": ctx.seed,
        "train": train,
        "backend": ctx.backend_key(),
    });
    let mut r = Report::default();
    let extra = json!({"mean": report.mean, "std_dev": report.std_dev});
    sweep_outputs(
        ctx,
        &mut r,
        "sweep-robustness",
        "instruction_id",
        key,
        &report.points,
        extra,
        args.csv.as_deref(),
    )?;
    r.set("mean", report.mean);
    r.set("std_dev", report.std_dev);
    r.line(format!(
        "mean accuracy {:.4}, std dev {:.4}",
        report.mean, report.std_dev
    ));
    Ok(r)
}

pub fn run(ctx: &Context, command: &Command) -> Result<Report, CliError> {
    match command {
        Command::BuildCorpus(a) => build_corpus(ctx, a),
        Command::Diversify(a) => diversify(ctx, a),
        Command::Generate(a) => generate(ctx, a),
        Command::Incubate(a) => incubate(ctx, a),
        Command::Mine(a) => mine(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::SweepSize(a) => sweep_size(ctx, a),
        Command::SweepRobustness(a) => sweep_robustness(ctx, a),
    }
}

pub fn command_name(command: &Command) -> &'static str {
    match command {
        Command::BuildCorpus(_) => "build-corpus",
        Command::Diversify(_) => "diversify",
        Command::Generate(_) => "generate",
        Command::Incubate(_) => "incubate",
        Command::Mine(_) => "mine",
        Command::Eval(_) => "eval",
        Command::SweepSize(_) => "sweep-size",
        Command::SweepRobustness(_) => "sweep-robustness",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operand_bindings() {
        assert_eq!(
            parse_binding("pos=a/b.json").unwrap(),
            ("pos".into(), PathBuf::from("a/b.json"), None)
        );
        assert_eq!(
            parse_binding("pos=a.json#positive").unwrap(),
            (
                "pos".into(),
                PathBuf::from("a.json"),
                Some("positive".into())
            )
        );
        assert!(parse_binding("pos").is_err());
        assert!(parse_binding("=x").is_err());
    }

    #[test]
    fn task_resolution() {
        let t = TaskArgs {
            demand: None,
            labels: vec![],
            target: Some("sports".into()),
        };
        assert_eq!(instruction(&t).unwrap().labels(), ["sports", OTHER_LABEL]);
        let t = TaskArgs {
            demand: None,
            labels: vec!["a".into(), "b".into()],
            target: None,
        };
        assert!(instruction(&t).is_err());
        let t = TaskArgs {
            demand: Some("d".into()),
            ..t
        };
        assert_eq!(instruction(&t).unwrap().labels(), ["a", "b"]);
    }
}
