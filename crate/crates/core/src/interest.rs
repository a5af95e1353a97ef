//! Offline multi-interest extraction: project the sequence, cluster the
//! projections, then run target attention inside every cluster with the
//! cluster center as query.
//!
//! Attention weights are computed in the reduced `m`-dim space from
//! `(h_idx, c_i)`, but the weighted sum runs over the original `d`-dim
//! behavior embeddings.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::clustering::ClusteringMethod;
use crate::datagen::{BehaviorSequence, Dataset, ItemCatalog, UserId};
use crate::error::{Error, Result};
use crate::numerics::{softmax, weighted_sum, Relevance, Rng};
use crate::projection::ProjectionModel;

pub const CODE_VERSION: &str = concat!("encode-core/", env!("CARGO_PKG_VERSION"));

pub type ConfigHash = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub k: usize,
    pub t: usize,
    pub relevance: Relevance,
    pub clustering: ClusteringMethod,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            k: 30,
            t: 15,
            relevance: Relevance::UnifiedSim { beta: 20.0 },
            clustering: ClusteringMethod::KMeans,
        }
    }
}

/// SHA-256 over the projection bytes, the extraction parameters and the code
/// version.
pub fn config_hash(projection: &ProjectionModel, cfg: &ExtractConfig) -> ConfigHash {
    let mut h = Sha256::new();
    h.update(projection.to_bytes());
    h.update((cfg.k as u64).to_le_bytes());
    h.update((cfg.t as u64).to_le_bytes());
    h.update(cfg.relevance.name().as_bytes());
    if let Relevance::UnifiedSim { beta } = cfg.relevance {
        h.update(beta.to_le_bytes());
    }
    h.update(cfg.clustering.name().as_bytes());
    h.update(CODE_VERSION.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithinWeight {
    pub cluster: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestSet {
    pub user_id: UserId,
    /// One interest vector per effective cluster, in the original space.
    pub interests: Vec<Vec<f64>>,
    /// Indexed by behavior position. Empty when loaded from a store, which
    /// only persists the interests.
    pub within_weights: Vec<WithinWeight>,
    pub created_at: u64,
    pub config_hash: ConfigHash,
}

impl InterestSet {
    pub fn k_eff(&self) -> usize {
        self.interests.len()
    }

    pub fn dim(&self) -> usize {
        self.interests.first().map_or(0, Vec::len)
    }
}

/// Extraction over raw behavior embeddings (original space, sequence order).
pub fn extract_from_embeddings(
    user_id: UserId,
    behaviors: &[&[f64]],
    projection: &ProjectionModel,
    cfg: &ExtractConfig,
    created_at: u64,
    hash: ConfigHash,
    rng: &mut Rng,
) -> Result<InterestSet> {
    if behaviors.is_empty() {
        return Err(Error::EmptyInput("extract_interests"));
    }
    let reduced = projection.project_all(behaviors)?;
    let clustering = cfg.clustering.run(&reduced, cfg.k, cfg.t, rng)?;
    let d = behaviors[0].len();
    let mut within = vec![
        WithinWeight {
            cluster: 0,
            weight: 0.0
        };
        behaviors.len()
    ];
    let mut interests = Vec::with_capacity(clustering.k_eff());
    for (c, members) in clustering.members().into_iter().enumerate() {
        let center = &clustering.centers[c];
        let logits = members
            .iter()
            .map(|&i| cfg.relevance.logit(&reduced[i], center))
            .collect::<Result<Vec<f64>>>()?;
        let weights = softmax(&logits)?;
        for (&i, &w) in members.iter().zip(&weights) {
            within[i] = WithinWeight {
                cluster: c as u32,
                weight: w,
            };
        }
        interests.push(weighted_sum(
            d,
            members.iter().zip(&weights).map(|(&i, &w)| (w, behaviors[i])),
        ));
    }
    Ok(InterestSet {
        user_id,
        interests,
        within_weights: within,
        created_at,
        config_hash: hash,
    })
}

/// Interests of one user. `created_at` is the sequence's latest timestamp.
pub fn extract_interests(
    seq: &BehaviorSequence,
    catalog: &ItemCatalog,
    projection: &ProjectionModel,
    cfg: &ExtractConfig,
    rng: &mut Rng,
) -> Result<InterestSet> {
    let behaviors = seq.embeddings(catalog)?;
    let created_at = seq.events.last().map_or(0, |e| e.timestamp);
    extract_from_embeddings(
        seq.user_id,
        &behaviors,
        projection,
        cfg,
        created_at,
        config_hash(projection, cfg),
        rng,
    )
}

#[derive(Debug)]
pub struct BatchOutput {
    /// Sorted by user id.
    pub sets: Vec<InterestSet>,
    pub failures: Vec<(UserId, Error)>,
    pub config_hash: ConfigHash,
}

/// Extracts every user independently. Each user's clustering stream is
/// `Rng::new(seed).split(user_id)`, so output does not depend on
/// `parallelism`.
pub fn batch_extract(
    dataset: &Dataset,
    projection: &ProjectionModel,
    cfg: &ExtractConfig,
    parallelism: usize,
    seed: u64,
) -> Result<BatchOutput> {
    if projection.d() != dataset.dim() {
        return Err(Error::dim(dataset.dim(), projection.d()));
    }
    let root = Rng::new(seed);
    let hash = config_hash(projection, cfg);
    let run = || {
        dataset
            .sequences
            .par_iter()
            .map(|seq| {
                let mut rng = root.split(seq.user_id);
                let result = seq.embeddings(&dataset.catalog).and_then(|b| {
                    let created = seq.events.last().map_or(0, |e| e.timestamp);
                    extract_from_embeddings(seq.user_id, &b, projection, cfg, created, hash, &mut rng)
                });
                (seq.user_id, result)
            })
            .collect::<Vec<_>>()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(run);
    let mut sets = Vec::new();
    let mut failures = Vec::new();
    for (user, r) in results {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => failures.push((user, e)),
        }
    }
    sets.sort_by_key(|s| s.user_id);
    Ok(BatchOutput {
        sets,
        failures,
        config_hash: hash,
    })
}
