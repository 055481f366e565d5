//! Self-diversification: embed each sample set as the concatenation of its
//! per-label embeddings, cluster the pool, and keep the sample nearest each
//! centroid.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{kmeans, ClusterError, ClusteringResult};
use crate::gateway::{Embedding, Gateway, GatewayError};
use crate::model::{Instruction, InstructionDataPair, LabeledSampleSet, Provenance};
use crate::parse::parse_sample;
use crate::prompt::{generation_request, request_seed, Sampling};

#[derive(Debug, Error)]
pub enum DiversifyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("generation pool is empty: all {0} generations failed to parse")]
    EmptyPool(usize),
}

/// A sample set embedded as one `n * d` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatEmbedding {
    pub values: Vec<f64>,
    pub source_index: usize,
}

/// Concatenates per-label segments in the given order.
pub fn concat_segments(segments: &[Embedding]) -> Vec<f64> {
    segments
        .iter()
        .flat_map(|e| e.values().iter().copied())
        .collect()
}

pub fn embed_sample_set(
    sample: &LabeledSampleSet,
    instruction: &Instruction,
    gateway: &Gateway,
) -> Result<ConcatEmbedding, GatewayError> {
    let mut pool = embed_pool(std::slice::from_ref(sample), instruction, gateway)?;
    Ok(pool.remove(0))
}

/// Embeds a whole pool in one batched gateway call.
pub fn embed_pool(
    pool: &[LabeledSampleSet],
    instruction: &Instruction,
    gateway: &Gateway,
) -> Result<Vec<ConcatEmbedding>, GatewayError> {
    let n = instruction.n_labels();
    let texts: Vec<String> = pool
        .iter()
        .flat_map(|s| s.texts().iter().cloned())
        .collect();
    let vectors = gateway.embed(&texts)?;
    Ok(vectors
        .chunks(n)
        .enumerate()
        .map(|(i, segs)| ConcatEmbedding {
            values: concat_segments(segs),
            source_index: i,
        })
        .collect())
}

/// Outcome of generating a diversification pool.
#[derive(Debug, Clone)]
pub struct Pool {
    pub samples: Vec<LabeledSampleSet>,
    pub attempted: usize,
}

/// Generates `size` samples for one instruction. Unparseable generations are
/// left out rather than retried.
pub fn generate_pool(
    instruction: &Instruction,
    size: usize,
    gateway: &Gateway,
    sampling: Sampling,
    seed: u64,
) -> Result<Pool, GatewayError> {
    let reqs: Vec<_> = (0..size as u64)
        .map(|i| generation_request(instruction, sampling, request_seed(seed, i)))
        .collect();
    let mut samples = Vec::new();
    for r in gateway.complete_all(&reqs) {
        match r {
            Ok(raw) => {
                if let Ok(s) = parse_sample(&raw, instruction).outcome {
                    samples.push(s);
                }
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(_) => {}
        }
    }
    Ok(Pool {
        samples,
        attempted: size,
    })
}

/// Clustering of a pool plus the chosen pairs.
#[derive(Debug, Clone)]
pub struct Diversification {
    pub pairs: Vec<InstructionDataPair>,
    pub clustering: ClusteringResult,
}

fn batch_id(instruction: &Instruction, k: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(instruction.id().as_bytes());
    h.update(k.to_le_bytes());
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..6])
}

/// Clusters the pool into `k` groups and returns one pair per cluster, all
/// tagged with a shared batch id. Fewer than `k` pairs come back when the
/// pool has fewer distinct embeddings.
pub fn build_diversification_batches(
    instruction: &Instruction,
    pool: &[LabeledSampleSet],
    k: usize,
    gateway: &Gateway,
    seed: u64,
) -> Result<Diversification, DiversifyError> {
    if pool.is_empty() {
        return Err(DiversifyError::EmptyPool(0));
    }
    let embedded = embed_pool(pool, instruction, gateway)?;
    let points: Vec<Vec<f64>> = embedded.into_iter().map(|e| e.values).collect();
    let clustering = kmeans(&points, k, seed)?;
    let batch = batch_id(instruction, k, seed);
    let pairs = clustering
        .representatives
        .iter()
        .map(|&i| {
            let mut p = InstructionDataPair::new(
                instruction.clone(),
                pool[i].clone(),
                Provenance::Diversified,
            );
            p.batch_id = Some(batch.clone());
            p
        })
        .collect();
    Ok(Diversification { pairs, clustering })
}
