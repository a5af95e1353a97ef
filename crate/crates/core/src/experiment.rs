//! Strategy harness shared by the evaluation commands: every strategy is
//! split into an offline preparation step (per user) and an online step (per
//! target), so relevance, AUC and latency are measured on the same code.

use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{
    avg_pooling_weights, din_l_weights, din_short_weights, eta_retrieve, sdim_weights, sim_hard_weights,
    strategy_interest, twin_weights, HashCodes, Retrieval, SimHasher, StrategyWeights,
};
use crate::datagen::{BehaviorSequence, Dataset, ItemCatalog, UserId};
use crate::error::{Error, Result};
use crate::evalmetrics::{auc, cross_entropy, entropy, gauc, percentile, AucRecord, BenchRecord, RiRecord};
use crate::inference::{attend, infer_interest, train_head, HeadExample, HeadTrainConfig, ScoringHead};
use crate::interest::{config_hash, extract_from_embeddings, ExtractConfig, InterestSet};
use crate::numerics::{metric_counts, weighted_sum, Relevance, Rng};
use crate::projection::ProjectionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Encode,
    /// ENCODE with scaled dot-product in both attention stages.
    EncodeMinus,
    DinL,
    /// DIN over the most recent behaviors only.
    Din,
    AvgPooling,
    SimHard,
    Eta,
    EtaEncode,
    EtaTa,
    Twin,
    Sdim,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::Encode,
        Strategy::EncodeMinus,
        Strategy::DinL,
        Strategy::Din,
        Strategy::AvgPooling,
        Strategy::SimHard,
        Strategy::Eta,
        Strategy::EtaEncode,
        Strategy::EtaTa,
        Strategy::Twin,
        Strategy::Sdim,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Encode => "encode",
            Strategy::EncodeMinus => "encode-minus",
            Strategy::DinL => "din-l",
            Strategy::Din => "din",
            Strategy::AvgPooling => "avg-pooling",
            Strategy::SimHard => "sim-hard",
            Strategy::Eta => "eta",
            Strategy::EtaEncode => "eta-encode",
            Strategy::EtaTa => "eta-ta",
            Strategy::Twin => "twin",
            Strategy::Sdim => "sdim",
        }
    }

    /// Accepts kebab or snake case.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyParams {
    /// Retrieval budget `k` of SIM, ETA and TWIN.
    pub k_retrieve: usize,
    pub n_bits: usize,
    pub slice_width: usize,
    /// Length `M` of the short sequence used by DIN and the real-time feature.
    pub short_len: usize,
    pub extract: ExtractConfig,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            k_retrieve: 50,
            n_bits: 64,
            slice_width: 2,
            short_len: 50,
            extract: ExtractConfig::default(),
        }
    }
}

const HASH_STREAM: u64 = 0x5348_4153;

/// Shared artifacts: the projection, the SimHash matrix and the parameters.
#[derive(Debug, Clone)]
pub struct Models {
    pub projection: ProjectionModel,
    pub hasher: SimHasher,
    pub params: StrategyParams,
    /// Seed of the per-user clustering streams.
    pub seed: u64,
}

impl Models {
    pub fn new(projection: ProjectionModel, params: StrategyParams, seed: u64) -> Result<Self> {
        let hasher = SimHasher::new(
            projection.d(),
            params.n_bits,
            &mut Rng::new(seed).split(HASH_STREAM),
        )?;
        Ok(Models {
            projection,
            hasher,
            params,
            seed,
        })
    }

    fn minus_config(&self) -> ExtractConfig {
        ExtractConfig {
            relevance: Relevance::ScaledDot,
            ..self.params.extract
        }
    }
}

/// Offline state of one user.
#[derive(Debug, Clone)]
pub struct UserState<'a> {
    pub user_id: UserId,
    pub behaviors: Vec<&'a [f64]>,
    pub categories: Vec<u32>,
    encode: Option<InterestSet>,
    encode_minus: Option<InterestSet>,
    codes: Option<HashCodes>,
    reduced: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub embedding: &'a [f64],
    pub category: u32,
}

impl<'a> UserState<'a> {
    pub fn prepare(
        seq: &BehaviorSequence,
        catalog: &'a ItemCatalog,
        strategies: &[Strategy],
        models: &Models,
    ) -> Result<Self> {
        let behaviors = seq.embeddings(catalog)?;
        let categories = seq.events.iter().map(|e| e.category).collect();
        let created = seq.events.last().map_or(0, |e| e.timestamp);
        Self::from_embeddings(seq.user_id, behaviors, categories, created, strategies, models)
    }

    pub fn from_embeddings(
        user_id: UserId,
        behaviors: Vec<&'a [f64]>,
        categories: Vec<u32>,
        created_at: u64,
        strategies: &[Strategy],
        models: &Models,
    ) -> Result<Self> {
        if behaviors.is_empty() {
            return Err(Error::EmptyInput("user state"));
        }
        if categories.len() != behaviors.len() {
            return Err(Error::dim(behaviors.len(), categories.len()));
        }
        let root = Rng::new(models.seed);
        let extract = |cfg: &ExtractConfig| {
            extract_from_embeddings(
                user_id,
                &behaviors,
                &models.projection,
                cfg,
                created_at,
                config_hash(&models.projection, cfg),
                &mut root.split(user_id),
            )
        };
        let has = |s: Strategy| strategies.contains(&s);
        let encode = has(Strategy::Encode).then(|| extract(&models.params.extract)).transpose()?;
        let encode_minus = has(Strategy::EncodeMinus)
            .then(|| extract(&models.minus_config()))
            .transpose()?;
        let codes = (has(Strategy::Eta) || has(Strategy::Sdim))
            .then(|| models.hasher.hash_all(&behaviors))
            .transpose()?;
        let reduced = has(Strategy::EtaEncode)
            .then(|| models.projection.project_all(&behaviors))
            .transpose()?;
        Ok(UserState {
            user_id,
            behaviors,
            categories,
            encode,
            encode_minus,
            codes,
            reduced,
        })
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    pub fn interest_set(&self, strategy: Strategy) -> Option<&InterestSet> {
        match strategy {
            Strategy::Encode => self.encode.as_ref(),
            Strategy::EncodeMinus => self.encode_minus.as_ref(),
            _ => None,
        }
    }

    /// Average of the most recent `m` behaviors.
    pub fn recent_mean(&self, m: usize) -> Vec<f64> {
        let start = self.len().saturating_sub(m.max(1));
        let tail = &self.behaviors[start..];
        let w = 1.0 / tail.len() as f64;
        weighted_sum(tail[0].len(), tail.iter().map(|b| (w, *b)))
    }
}

fn not_prepared(strategy: Strategy) -> Error {
    Error::Config(format!("user state not prepared for {}", strategy.name()))
}

fn prepared<T>(v: &Option<T>, strategy: Strategy) -> Result<&T> {
    v.as_ref().ok_or_else(|| not_prepared(strategy))
}

impl Strategy {
    /// Final weight of every behavior for one target.
    pub fn weights(&self, state: &UserState, target: Target, models: &Models) -> Result<StrategyWeights> {
        let s = &state.behaviors;
        let x = target.embedding;
        let p = &models.params;
        match self {
            Strategy::Encode | Strategy::EncodeMinus => {
                let set = state
                    .interest_set(*self)
                    .ok_or_else(|| not_prepared(*self))?;
                let (_, trace) = infer_interest(set, x, self.online_relevance(models))?;
                Ok(StrategyWeights::dense(trace.behavior_weights))
            }
            Strategy::DinL => din_l_weights(s, x, Relevance::ScaledDot),
            Strategy::Din => din_short_weights(s, x, p.short_len),
            Strategy::AvgPooling => Ok(avg_pooling_weights(s.len())),
            Strategy::SimHard => sim_hard_weights(s, &state.categories, x, target.category, p.k_retrieve),
            Strategy::Eta => {
                let codes = prepared(&state.codes, *self)?;
                eta_retrieve(s, x, Retrieval::SimHash(codes, &models.hasher), p.k_retrieve)
            }
            Strategy::EtaEncode => {
                let reduced = prepared(&state.reduced, *self)?;
                eta_retrieve(s, x, Retrieval::Projected(reduced, &models.projection), p.k_retrieve)
            }
            Strategy::EtaTa => eta_retrieve(s, x, Retrieval::ScaledDot, p.k_retrieve),
            Strategy::Twin => twin_weights(s, x, p.k_retrieve),
            Strategy::Sdim => {
                let codes = prepared(&state.codes, *self)?;
                sdim_weights(codes, &models.hasher.hash(x)?, p.slice_width)
            }
        }
    }

    /// The interest vector `I` fed to the scoring head. For ENCODE this only
    /// touches the stored interests.
    pub fn interest(&self, state: &UserState, target: Target, models: &Models) -> Result<Vec<f64>> {
        match self {
            Strategy::Encode | Strategy::EncodeMinus => {
                let set = state
                    .interest_set(*self)
                    .ok_or_else(|| not_prepared(*self))?;
                Ok(attend(set, target.embedding, self.online_relevance(models))?.0)
            }
            _ => Ok(strategy_interest(&self.weights(state, target, models)?, &state.behaviors)),
        }
    }

    fn online_relevance(&self, models: &Models) -> Relevance {
        match self {
            Strategy::EncodeMinus => Relevance::ScaledDot,
            _ => models.params.extract.relevance,
        }
    }

    /// Size of the set the online step attends over.
    fn budget(&self, state: &UserState, models: &Models) -> usize {
        match self {
            Strategy::Encode | Strategy::EncodeMinus => state.interest_set(*self).map_or(0, InterestSet::k_eff),
            Strategy::SimHard | Strategy::Eta | Strategy::EtaEncode | Strategy::EtaTa | Strategy::Twin => {
                models.params.k_retrieve.min(state.len())
            }
            Strategy::Din => models.params.short_len.min(state.len()),
            _ => state.len(),
        }
    }
}

/// `(user index, sample index)` pairs drawn without replacement, in a seeded
/// order, grouped by user for preparation.
fn pick_samples(ds: &Dataset, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.samples.len()).collect();
    Rng::new(seed).split(0x5249).shuffle(&mut idx);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

fn sequence_index(ds: &Dataset) -> std::collections::HashMap<UserId, usize> {
    ds.sequences.iter().enumerate().map(|(i, s)| (s.user_id, i)).collect()
}

/// Groups sample indices by user and runs `f` on each user's prepared state
/// in parallel. Output follows the order of `samples`.
fn per_user<T, F>(
    ds: &Dataset,
    samples: &[usize],
    strategies: &[Strategy],
    models: &Models,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&UserState, &[usize]) -> Result<Vec<T>> + Sync,
{
    let seq_of = sequence_index(ds);
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut by_seq = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for &i in samples {
        let user = ds.samples[i].user_id;
        let seq = *seq_of
            .get(&user)
            .ok_or_else(|| Error::NotFound(format!("sequence for user {user}")))?;
        by_seq.entry(seq).or_default().push(i);
    }
    groups.extend(by_seq);
    let results: Vec<Result<Vec<(usize, T)>>> = groups
        .par_iter()
        .map(|(seq, idx)| {
            let state = UserState::prepare(&ds.sequences[*seq], &ds.catalog, strategies, models)?;
            Ok(idx.iter().copied().zip(f(&state, idx)?).collect())
        })
        .collect();
    let mut flat = Vec::with_capacity(samples.len());
    for r in results {
        flat.extend(r?);
    }
    flat.sort_by_key(|(i, _)| *i);
    Ok(flat.into_iter().map(|(_, t)| t).collect())
}

fn target_of<'c>(ds: &'c Dataset, sample: usize) -> Result<Target<'c>> {
    let item = ds.samples[sample].target;
    let it = ds
        .catalog
        .get(item)
        .ok_or_else(|| Error::NotFound(format!("item {item}")))?;
    Ok(Target {
        embedding: &it.embedding,
        category: it.category,
    })
}

/// Weights of every strategy for up to `n_pairs` (user, target) pairs, plus
/// the DIN-L oracle as the last column.
pub fn pair_weights(
    ds: &Dataset,
    models: &Models,
    strategies: &[Strategy],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(Vec<StrategyWeights>, StrategyWeights)>> {
    let picked = pick_samples(ds, n_pairs, seed);
    per_user(ds, &picked, strategies, models, |state, idx| {
        idx.iter()
            .map(|&i| {
                let t = target_of(ds, i)?;
                let ws = strategies
                    .iter()
                    .map(|s| s.weights(state, t, models))
                    .collect::<Result<Vec<_>>>()?;
                Ok((ws, din_l_weights(&state.behaviors, t.embedding, Relevance::ScaledDot)?))
            })
            .collect()
    })
}

/// Mean relevance indicator of each strategy against DIN-L (scaled dot)
/// over `n_pairs` sampled (user, target) pairs.
pub fn evaluate_ri(
    ds: &Dataset,
    models: &Models,
    strategies: &[Strategy],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<RiRecord>> {
    let rows = pair_weights(ds, models, strategies, n_pairs, seed)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("relevance indicator pairs"));
    }
    let n = rows.len() as f64;
    let h = rows.iter().map(|(_, o)| entropy(&o.weights)).sum::<f64>() / n;
    strategies
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let total = rows
                .iter()
                .map(|(ws, o)| cross_entropy(&ws[j].weights, &o.weights))
                .sum::<Result<f64>>()?;
            Ok(RiRecord {
                strategy: s.name().into(),
                seed,
                mean_ri: total / n,
                oracle_entropy: h,
                samples: rows.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucConfig {
    pub head: HeadTrainConfig,
    /// Append the average of the last `short_len` behaviors as a feature.
    pub realtime: bool,
}

impl Default for AucConfig {
    fn default() -> Self {
        AucConfig {
            head: HeadTrainConfig {
                lr: 1e-2,
                batch_size: 32,
                epochs: 1,
            },
            realtime: false,
        }
    }
}

/// Head features of every sample for one strategy, in sample order.
pub fn sample_features(
    ds: &Dataset,
    models: &Models,
    strategy: Strategy,
    realtime: bool,
) -> Result<Vec<HeadExample>> {
    let all: Vec<usize> = (0..ds.samples.len()).collect();
    let template = ScoringHead::zeros(ds.dim(), realtime);
    per_user(ds, &all, &[strategy], models, |state, idx| {
        let recent = realtime.then(|| state.recent_mean(models.params.short_len));
        idx.iter()
            .map(|&i| {
                let t = target_of(ds, i)?;
                let interest = strategy.interest(state, t, models)?;
                Ok(HeadExample {
                    features: template.features(&interest, t.embedding, recent.as_deref())?,
                    label: ds.samples[i].label,
                })
            })
            .collect()
    })
}

/// Trains one shared-architecture head per strategy on the train split and
/// reports test AUC and per-user GAUC.
pub fn evaluate_auc(
    ds: &Dataset,
    models: &Models,
    strategies: &[Strategy],
    cfg: &AucConfig,
    seed: u64,
) -> Result<Vec<AucRecord>> {
    use crate::datagen::Split;
    strategies
        .iter()
        .map(|&s| {
            let examples = sample_features(ds, models, s, cfg.realtime)?;
            let (train, test): (Vec<_>, Vec<_>) = examples
                .into_iter()
                .zip(&ds.samples)
                .partition(|(_, smp)| smp.split == Split::Train);
            let train: Vec<HeadExample> = train.into_iter().map(|(e, _)| e).collect();
            let (head, _) = train_head(
                ScoringHead::zeros(ds.dim(), cfg.realtime),
                &train,
                &cfg.head,
                &mut Rng::new(seed).split(0x4845_4144),
            )?;
            let scores: Vec<f64> = test.iter().map(|(e, _)| head.predict(&e.features)).collect();
            let labels: Vec<u8> = test.iter().map(|(e, _)| e.label).collect();
            let groups: Vec<u64> = test.iter().map(|(_, smp)| smp.user_id).collect();
            Ok(AucRecord {
                strategy: s.name().into(),
                seed,
                auc: auc(&scores, &labels)?,
                gauc: gauc(&scores, &labels, &groups)?,
                samples: scores.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub targets: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            targets: 200,
            warmup: 20,
        }
    }
}

/// Online-phase latency per target for each strategy and sequence length.
/// Offline artifacts (interests, hash codes, projections) are built before
/// timing starts. Sequences are uniform catalog draws, so every length well
/// above `K` yields `K' = K` and only `L` varies across rows.
/// Metric-evaluation counts are exact; wall times are not deterministic.
pub fn bench(
    catalog: &ItemCatalog,
    models: &Models,
    strategies: &[Strategy],
    lengths: &[usize],
    cfg: &BenchConfig,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    if lengths.is_empty() || strategies.is_empty() {
        return Err(Error::EmptyInput("bench grid"));
    }
    if cfg.targets == 0 {
        return Err(Error::Config("bench needs at least one target".into()));
    }
    let root = Rng::new(seed).split(0x4245_4e43);
    let mut out = Vec::new();
    for &l in lengths {
        if l == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        let rng = root.split(l as u64);
        let mut srng = rng.split(1);
        let picks: Vec<usize> = (0..l).map(|_| srng.below(catalog.len())).collect();
        let behaviors = picks.iter().map(|&p| catalog.item_at(p).embedding.as_slice()).collect();
        let categories = picks.iter().map(|&p| catalog.item_at(p).category).collect();
        let state = UserState::from_embeddings(0, behaviors, categories, 0, strategies, models)?;
        let mut trng = rng.split(2);
        let targets: Vec<Target> = (0..cfg.targets)
            .map(|_| {
                let it = catalog.item_at(trng.below(catalog.len()));
                Target {
                    embedding: &it.embedding,
                    category: it.category,
                }
            })
            .collect();
        for &s in strategies {
            for t in targets.iter().cycle().take(cfg.warmup) {
                std::hint::black_box(s.interest(&state, *t, models)?);
            }
            let mut times = Vec::with_capacity(targets.len());
            let before = metric_counts();
            for t in &targets {
                let start = Instant::now();
                let i = s.interest(&state, *t, models)?;
                times.push(start.elapsed().as_nanos() as f64 / 1e3);
                std::hint::black_box(i);
            }
            let evals = metric_counts().since(before).total() as f64 / targets.len() as f64;
            times.sort_by(f64::total_cmp);
            out.push(BenchRecord {
                strategy: s.name().into(),
                l,
                k: s.budget(&state, models),
                p50_us: percentile(&times, 50.0),
                p95_us: percentile(&times, 95.0),
                p99_us: percentile(&times, 99.0),
                metric_evals_per_target: evals,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DatasetConfig, SampleConfig};
    use crate::projection::init_projection;

    fn small() -> (Dataset, Models) {
        let cfg = DatasetConfig {
            n_users: 4,
            n_items: 500,
            d: 8,
            n_categories: 4,
            seq_len: 60,
            samples: SampleConfig {
                n_pos: 4,
                n_neg: 4,
                ..SampleConfig::default()
            },
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&cfg, 1).unwrap().dataset;
        let params = StrategyParams {
            k_retrieve: 10,
            short_len: 10,
            extract: ExtractConfig {
                k: 5,
                ..ExtractConfig::default()
            },
            ..StrategyParams::default()
        };
        let proj = init_projection(8, 4, &mut Rng::new(2)).unwrap();
        (ds, Models::new(proj, params, 3).unwrap())
    }

    #[test]
    fn names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.name()), Some(s));
        }
        assert_eq!(Strategy::parse("din_l"), Some(Strategy::DinL));
        assert_eq!(Strategy::parse("nope"), None);
    }

    #[test]
    fn every_strategy_yields_a_distribution() {
        let (ds, models) = small();
        let rows = pair_weights(&ds, &models, &Strategy::ALL, 20, 0).unwrap();
        assert_eq!(rows.len(), 20);
        for (ws, oracle) in rows {
            for w in ws.iter().chain(std::iter::once(&oracle)) {
                assert_eq!(w.len(), 60);
                assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(w.weights.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn encode_interest_matches_weighted_behaviors() {
        let (ds, models) = small();
        let state = UserState::prepare(&ds.sequences[0], &ds.catalog, &[Strategy::Encode], &models).unwrap();
        let t = target_of(&ds, 0).unwrap();
        let i = Strategy::Encode.interest(&state, t, &models).unwrap();
        let w = Strategy::Encode.weights(&state, t, &models).unwrap();
        let j = strategy_interest(&w, &state.behaviors);
        for (a, b) in i.iter().zip(&j) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unprepared_strategy_is_an_error() {
        let (ds, models) = small();
        let state = UserState::prepare(&ds.sequences[0], &ds.catalog, &[], &models).unwrap();
        let t = target_of(&ds, 0).unwrap();
        assert!(Strategy::Encode.weights(&state, t, &models).is_err());
        assert!(Strategy::DinL.weights(&state, t, &models).is_ok());
    }

    #[test]
    fn bench_counts_metric_evaluations() {
        let (ds, models) = small();
        let cfg = BenchConfig {
            targets: 5,
            warmup: 1,
            ..BenchConfig::default()
        };
        let recs = bench(&ds.catalog, &models, &[Strategy::Encode, Strategy::DinL], &[40, 80], &cfg, 0).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            match r.strategy.as_str() {
                "encode" => assert_eq!(r.metric_evals_per_target, r.k as f64),
                _ => assert_eq!(r.metric_evals_per_target, r.l as f64),
            }
            assert!(r.p50_us <= r.p95_us && r.p95_us <= r.p99_us);
        }
    }
}
