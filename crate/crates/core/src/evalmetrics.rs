//! Evaluation: relevance indicator, AUC/GAUC, distance-preservation
//! agreement, latency percentiles and CSV reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::baselines::StrategyWeights;
use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, Rng};
use crate::projection::ProjectionModel;

/// Clamp applied to method probabilities inside the relevance indicator, so
/// behaviors a strategy discarded contribute `−oracle_i · ln 1e-12`.
pub const RI_CLAMP: f64 = 1e-12;

/// Cross-entropy `−Σ oracleᵢ · ln(max(methodᵢ, 1e-12))`.
pub fn relevance_indicator(method: &StrategyWeights, oracle: &StrategyWeights) -> Result<f64> {
    cross_entropy(&method.weights, &oracle.weights)
}

pub fn cross_entropy(method: &[f64], oracle: &[f64]) -> Result<f64> {
    if method.len() != oracle.len() {
        return Err(Error::dim(oracle.len(), method.len()));
    }
    Ok(-oracle
        .iter()
        .zip(method)
        .filter(|(&o, _)| o > 0.0)
        .map(|(&o, &m)| o * m.max(RI_CLAMP).ln())
        .sum::<f64>())
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += mid * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Impression-weighted mean of per-group AUC; groups with a single class are
/// skipped and the remaining weights renormalized.
pub fn gauc(scores: &[f64], labels: &[u8], groups: &[u64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(Error::dim(scores.len(), groups.len().min(labels.len())));
    }
    let mut by_group: BTreeMap<u64, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for ((&s, &l), &g) in scores.iter().zip(labels).zip(groups) {
        let e = by_group.entry(g).or_default();
        e.0.push(s);
        e.1.push(l);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, l) in by_group.values() {
        if let Ok(a) = auc(s, l) {
            num += a * s.len() as f64;
            den += s.len() as f64;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("gauc needs a group with both classes"));
    }
    Ok(num / den)
}

/// Fraction of random ordered triples `(i, j, k)` whose distance ordering
/// `sign(dis(s_i,s_j) − dis(s_i,s_k))` survives projection. Exact ties in
/// either space count as agreement.
pub fn triplet_agreement(
    projection: &ProjectionModel,
    s: &[&[f64]],
    n_trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if s.len() < 3 {
        return Err(Error::EmptyInput("triplet_agreement needs 3 behaviors"));
    }
    if n_trials == 0 {
        return Err(Error::EmptyInput("triplet_agreement trials"));
    }
    let h = projection.project_all(s)?;
    let mut agree = 0usize;
    for _ in 0..n_trials {
        let i = rng.below(s.len());
        let j = loop {
            let j = rng.below(s.len());
            if j != i {
                break j;
            }
        };
        let k = loop {
            let k = rng.below(s.len());
            if k != i && k != j {
                break k;
            }
        };
        let orig = cosine_distance(s[i], s[j])? - cosine_distance(s[i], s[k])?;
        let proj = cosine_distance(&h[i], &h[j])? - cosine_distance(&h[i], &h[k])?;
        if orig == 0.0 || proj == 0.0 || (orig > 0.0) == (proj > 0.0) {
            agree += 1;
        }
    }
    Ok(agree as f64 / n_trials as f64)
}

/// Nearest-rank percentile of an already sorted sample, `q ∈ (0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub strategy: String,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub metric_evals_per_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiRecord {
    pub strategy: String,
    pub seed: u64,
    pub mean_ri: f64,
    /// Mean entropy of the oracle weights, the lower bound of `mean_ri`.
    pub oracle_entropy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucRecord {
    pub strategy: String,
    pub seed: u64,
    pub auc: f64,
    pub gauc: f64,
    pub samples: usize,
}

pub const BENCH_HEADER: &str = "strategy,L,K,p50_us,p95_us,p99_us,metric_evals_per_target";
pub const RI_HEADER: &str = "strategy,seed,mean_ri,oracle_entropy,samples";
pub const AUC_HEADER: &str = "strategy,seed,auc,gauc,samples";

/// Writes records as CSV with a header row derived from the field names.
pub fn write_csv<T: Serialize, W: Write>(out: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, records)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}
