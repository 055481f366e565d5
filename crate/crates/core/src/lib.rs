//! Incubate small text classifiers from a single natural-language
//! instruction.
//!
//! The pipeline asks an instruction-following model for label→text
//! dictionaries, optionally diversifies them by clustering their embeddings,
//! trains a softmax probe over frozen text embeddings, and combines several
//! such probes with a probabilistic boolean calculus for text mining.

pub mod cluster;
pub mod diversify;
pub mod gateway;
pub mod incubate;
pub mod logic;
pub mod mining;
pub mod model;
pub mod parse;
pub mod probe;
pub mod prompt;
pub mod tuning;

pub use cluster::{kmeans, ClusterError, ClusteringResult, KMeansConfig};
pub use diversify::{build_diversification_batches, embed_sample_set, DiversifyError};
pub use gateway::{
    BackendConfig, Embedding, Gateway, GatewayError, GenerationRequest, Message, MockBackend,
    RetryPolicy, Role, Scenario,
};
pub use incubate::{generate_dataset, GenerateError};
pub use logic::{parse_query, parse_registered, Expr, LogicError};
pub use mining::{
    accuracy_eval, precision_at_k, score_corpus, top_k, Corpus, DocId, MiningError, MiningResult,
    Query, Scorer,
};
pub use model::{
    validate_instruction, Example, IncubationDataset, Instruction, InstructionDataPair,
    LabeledSampleSet, ModelError, Provenance,
};
pub use parse::{parse_sample, serialize_sample, ParseError, ParseReport, Repair};
pub use probe::{
    load_classifier, predict, save_classifier, train_classifier, IncubatedClassifier, TrainConfig,
    TrainError,
};
pub use tuning::{
    augment_icl, build_seed_pairs, export_tuning_corpus, DatasetDescriptor, TuningCorpus,
    TuningError,
};
