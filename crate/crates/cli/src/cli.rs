use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "incubator",
    version,
    about = "Incubate small text classifiers from a natural-language instruction"
)]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Run seed; overrides the config default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Use the deterministic mock backend: a built-in scenario name or a
    /// scenario JSON file.
    #[arg(long, global = true, value_name = "SCENARIO")]
    pub mock: Option<String>,

    /// Artifact directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub workspace: Option<PathBuf>,

    /// Print one JSON document on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an instruction-tuning corpus from local labeled datasets.
    BuildCorpus(BuildCorpusArgs),
    /// Generate a pool, cluster it and keep one representative per cluster.
    Diversify(DiversifyArgs),
    /// Generate a labeled dataset without training.
    Generate(GenerateArgs),
    /// Generate a dataset and train a classifier on it.
    Incubate(IncubateArgs),
    /// Rank a corpus with one classifier or a logic query over several.
    Mine(MineArgs),
    /// Accuracy of a classifier on a labeled set.
    Eval(EvalArgs),
    /// Accuracy as a function of generated dataset size.
    SweepSize(SweepSizeArgs),
    /// Accuracy across paraphrases of one instruction.
    SweepRobustness(SweepRobustnessArgs),
}

/// The task to incubate: a demand with labels, or a single target label
/// against a catch-all class.
#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Natural-language description of the task.
    #[arg(long)]
    pub demand: Option<String>,

    /// Comma-separated labels, at least two.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,

    /// Incubate TARGET against a catch-all "Other" class instead of --labels.
    #[arg(long, conflicts_with = "labels")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Fraction of the dataset held out for accuracy.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    /// Directory with one subdirectory per dataset (meta.json + data.jsonl).
    #[arg(long, value_name = "DIR")]
    pub descriptors: PathBuf,

    /// Seed pairs drawn per dataset.
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,

    /// In-context augmented pairs to add.
    #[arg(long, default_value_t = 0)]
    pub augment: usize,
}

#[derive(Debug, Args)]
pub struct DiversifyArgs {
    #[command(flatten)]
    pub task: TaskArgs,

    /// Generations in the pool.
    #[arg(long)]
    pub pool: Option<usize>,

    /// Representatives to keep.
    #[arg(long)]
    pub k: Option<usize>,

    /// Existing tuning corpus the representatives are appended to.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub task: TaskArgs,

    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IncubateArgs {
    #[command(flatten)]
    pub task: TaskArgs,

    #[arg(long)]
    pub count: Option<usize>,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Register the classifier under NAME for logic queries.
    #[arg(long, value_name = "NAME")]
    pub register: Option<String>,

    /// Label scored when the registered name is used; defaults to the
    /// target or the first label.
    #[arg(long, value_name = "LABEL", requires = "register")]
    pub register_label: Option<String>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Corpus: JSONL with "text" (and optional "id"), or plain text lines.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,

    /// Classifier artifact for a single-classifier query.
    #[arg(long, value_name = "PATH", conflicts_with = "logic")]
    pub classifier: Option<PathBuf>,

    /// Label to rank by with --classifier; defaults to the first label.
    #[arg(long, requires = "classifier")]
    pub label: Option<String>,

    /// Boolean query over registered classifier names.
    #[arg(long, value_name = "QUERY")]
    pub logic: Option<String>,

    /// Bind an operand: NAME=PATH or NAME=PATH#LABEL.
    #[arg(long = "operand", value_name = "BINDING", requires = "logic")]
    pub operands: Vec<String>,

    /// Incubate a target-vs-Other classifier for unknown operands.
    #[arg(long, requires = "logic")]
    pub auto_incubate: bool,

    /// Incubate one classifier for the whole query instead of combining.
    #[arg(long, requires = "logic", conflicts_with = "auto_incubate")]
    pub direct: bool,

    /// Dataset size for classifiers incubated during mining.
    #[arg(long)]
    pub count: Option<usize>,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Documents to return.
    #[arg(long)]
    pub k: Option<usize>,

    /// Judgments ({"id", "ok"} lines) for precision@k.
    #[arg(long, value_name = "PATH")]
    pub judgments: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub classifier: PathBuf,

    /// Labeled set: JSONL lines with "text" and "label".
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepSizeArgs {
    #[command(flatten)]
    pub task: TaskArgs,

    /// Ascending dataset sizes.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "4,8,16,32,64,128,256,512,1024"
    )]
    pub sizes: Vec<usize>,

    /// Labeled evaluation set.
    #[arg(long, value_name = "PATH")]
    pub eval: PathBuf,

    /// Also write the timing CSV here.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SweepRobustnessArgs {
    /// File with one paraphrased demand per line.
    #[arg(long, value_name = "PATH")]
    pub paraphrases: PathBuf,

    #[arg(long, value_delimiter = ',', required = true)]
    pub labels: Vec<String>,

    #[arg(long)]
    pub count: Option<usize>,

    /// Labeled evaluation set.
    #[arg(long, value_name = "PATH")]
    pub eval: PathBuf,

    /// Also write the timing CSV here.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    #[command(flatten)]
    pub train: TrainArgs,
}
