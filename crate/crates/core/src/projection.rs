//! Metric-learned linear projection `h = W_hᵀ e` from `d` to `m` dimensions.
//!
//! Triplets are drawn from behavior sequences: two candidates are sampled
//! around an anchor and the one closer to it in the original space becomes
//! the positive. The dynamic triplet loss uses the original-space distance
//! gap as a per-anchor margin, so near-tied candidates carry a near-zero
//! margin instead of a fixed one. Gradients are analytic through the cosine
//! distance.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::datagen::{Dataset, ItemCatalog};
use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, dot, norm, Mat, Rng};
use crate::optim::Adam;

pub const PROJECTION_MAGIC: &[u8; 4] = b"ENCP";
pub const PROJECTION_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    weights: Mat,
    init_seed: u64,
    log: Vec<(usize, f64)>,
}

/// `W_h` with i.i.d. N(0, 1) entries.
pub fn init_projection(d: usize, m: usize, rng: &mut Rng) -> Result<ProjectionModel> {
    if m == 0 || d == 0 {
        return Err(Error::Config("projection dimensions must be positive".into()));
    }
    if m > d {
        return Err(Error::dim(d, m));
    }
    Ok(ProjectionModel {
        weights: Mat::standard_normal(d, m, rng),
        init_seed: rng.seed(),
        log: Vec::new(),
    })
}

impl ProjectionModel {
    pub fn from_matrix(weights: Mat) -> Self {
        ProjectionModel {
            weights,
            init_seed: 0,
            log: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.weights.rows()
    }

    pub fn m(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// `(step, loss)` pairs appended by [`train_projection`].
    pub fn training_log(&self) -> &[(usize, f64)] {
        &self.log
    }

    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.weights.matvec_t(e)
    }

    pub fn project_all(&self, es: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        es.iter().map(|e| self.project(e)).collect()
    }

    /// `"ENCP" | u16 version | u32 d | u32 m | d·m f64 | u32 CRC32`, little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 8 * self.weights.data().len() + 4);
        out.extend_from_slice(PROJECTION_MAGIC);
        out.extend_from_slice(&PROJECTION_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d() as u32).to_le_bytes());
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        for x in self.weights.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptStore(format!("projection: {msg}"));
        if bytes.len() < 18 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != PROJECTION_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != PROJECTION_VERSION {
            return Err(Error::Version {
                expected: PROJECTION_VERSION as u32,
                found: version as u32,
            });
        }
        let d = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(body[10..14].try_into().unwrap()) as usize;
        let payload = &body[14..];
        if payload.len() != d * m * 8 {
            return Err(corrupt("payload length does not match d·m"));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ProjectionModel::from_matrix(Mat::from_vec(d, m, data)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    WithinNeighbors,
    WithinSequence,
    WithinBatch,
}

impl SamplingStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "within-neighbors" | "within_neighbors" => Some(Self::WithinNeighbors),
            "within-sequence" | "within_sequence" => Some(Self::WithinSequence),
            "within-batch" | "within_batch" => Some(Self::WithinBatch),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::WithinNeighbors => "within-neighbors",
            Self::WithinSequence => "within-sequence",
            Self::WithinBatch => "within-batch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    None,
    Mse,
    NPairMc { n_negatives: usize },
    TripletsFixed { alpha: f64 },
    TripletsDynamic,
}

impl LossSpec {
    pub const DEFAULT_FIXED_MARGIN: f64 = 0.2;
    pub const DEFAULT_N_NEGATIVES: usize = 5;

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "mse" => Some(Self::Mse),
            "n-pair-mc" | "n_pair_mc" => Some(Self::NPairMc {
                n_negatives: Self::DEFAULT_N_NEGATIVES,
            }),
            "triplets-fixed" | "triplets_fixed" => Some(Self::TripletsFixed {
                alpha: Self::DEFAULT_FIXED_MARGIN,
            }),
            "triplets-dynamic" | "triplets_dynamic" => Some(Self::TripletsDynamic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Mse => "mse",
            Self::NPairMc { .. } => "n-pair-mc",
            Self::TripletsFixed { .. } => "triplets-fixed",
            Self::TripletsDynamic => "triplets-dynamic",
        }
    }

    fn n_negatives(&self) -> usize {
        match self {
            Self::NPairMc { n_negatives } => *n_negatives,
            _ => 1,
        }
    }
}

/// Anchor with its positive and negative(s); indices point into a
/// [`SamplePool`]. `alpha = dis(s_i, s_n) − dis(s_i, s_p) ≥ 0` for the first
/// negative. `extra_negatives` is only populated for N-pair tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub alpha: f64,
    pub extra_negatives: Vec<usize>,
}

impl Triplet {
    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.negative).chain(self.extra_negatives.iter().copied())
    }
}

/// Original-space behavior embeddings of several sequences, flattened.
#[derive(Debug, Clone)]
pub struct SamplePool<'a> {
    points: Vec<&'a [f64]>,
    sequences: Vec<Range<usize>>,
    seq_of: Vec<usize>,
}

impl<'a> SamplePool<'a> {
    pub fn new(sequences: Vec<Vec<&'a [f64]>>) -> Self {
        let mut points = Vec::new();
        let mut ranges = Vec::with_capacity(sequences.len());
        let mut seq_of = Vec::new();
        for (s, seq) in sequences.into_iter().enumerate() {
            let start = points.len();
            seq_of.extend(std::iter::repeat_n(s, seq.len()));
            points.extend(seq);
            ranges.push(start..points.len());
        }
        SamplePool {
            points,
            sequences: ranges,
            seq_of,
        }
    }

    pub fn single(sequence: Vec<&'a [f64]>) -> Self {
        Self::new(vec![sequence])
    }

    pub fn from_dataset(ds: &'a Dataset) -> Result<Self> {
        Self::from_sequences(&ds.catalog, ds.sequences.iter().map(|s| s.events.as_slice()))
    }

    pub fn from_sequences<'s>(
        catalog: &'a ItemCatalog,
        sequences: impl Iterator<Item = &'s [crate::datagen::Event]>,
    ) -> Result<Self> {
        let seqs = sequences
            .map(|evs| evs.iter().map(|e| catalog.embedding(e.item)).collect())
            .collect::<Result<Vec<Vec<&[f64]>>>>()?;
        Ok(Self::new(seqs))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        self.points[i]
    }

    pub fn points(&self) -> &[&'a [f64]] {
        &self.points
    }

    pub fn sequence_range(&self, flat: usize) -> Range<usize> {
        self.sequences[self.seq_of[flat]].clone()
    }
}

fn draw_excluding(
    count: usize,
    pick: impl Fn(usize) -> usize,
    excluded: &[usize],
    rng: &mut Rng,
) -> usize {
    loop {
        let c = pick(rng.below(count));
        if !excluded.contains(&c) {
            return c;
        }
    }
}

/// Draws `want` distinct candidates (all different from the anchor) from the
/// strategy's pool. Neighbors come first for `WithinNeighbors`; any shortfall
/// is filled uniformly from the anchor's sequence.
fn draw_candidates(
    pool: &SamplePool,
    batch: &[usize],
    anchor: usize,
    strategy: SamplingStrategy,
    want: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let seq = pool.sequence_range(anchor);
    let too_small = |size: usize| {
        Error::Sampling(format!(
            "{} pool for anchor {anchor} has {size} candidates, need {want}",
            strategy.name()
        ))
    };
    let mut chosen = vec![anchor];
    match strategy {
        SamplingStrategy::WithinSequence | SamplingStrategy::WithinNeighbors => {
            let available = seq.len() - 1;
            if available < want {
                return Err(too_small(available));
            }
            if strategy == SamplingStrategy::WithinNeighbors {
                if anchor > seq.start {
                    chosen.push(anchor - 1);
                }
                if anchor + 1 < seq.end && chosen.len() <= want {
                    chosen.push(anchor + 1);
                }
            }
            while chosen.len() < want + 1 {
                let start = seq.start;
                let c = draw_excluding(seq.len(), |k| start + k, &chosen, rng);
                chosen.push(c);
            }
        }
        SamplingStrategy::WithinBatch => {
            let available = batch.len() - usize::from(batch.binary_search(&anchor).is_ok());
            if available < want {
                return Err(too_small(available));
            }
            while chosen.len() < want + 1 {
                let c = draw_excluding(batch.len(), |k| batch[k], &chosen, rng);
                chosen.push(c);
            }
        }
    }
    chosen.remove(0);
    Ok(chosen)
}

/// Picks two candidates around `anchor` and orders them by original-space
/// distance: the closer one is the positive (lower index on exact ties).
/// `batch` must be sorted and deduplicated; it is only read for `WithinBatch`.
pub fn select_triplet(
    pool: &SamplePool,
    batch: &[usize],
    anchor: usize,
    strategy: SamplingStrategy,
    rng: &mut Rng,
) -> Result<Triplet> {
    select_tuple(pool, batch, anchor, strategy, 1, rng)
}

/// Generalization of [`select_triplet`] to `n_negatives` negatives: draws
/// `n_negatives + 1` candidates; the closest is the positive.
pub fn select_tuple(
    pool: &SamplePool,
    batch: &[usize],
    anchor: usize,
    strategy: SamplingStrategy,
    n_negatives: usize,
    rng: &mut Rng,
) -> Result<Triplet> {
    let candidates = draw_candidates(pool, batch, anchor, strategy, n_negatives + 1, rng)?;
    let s_i = pool.point(anchor);
    let dists = candidates
        .iter()
        .map(|&c| cosine_distance(s_i, pool.point(c)))
        .collect::<Result<Vec<f64>>>()?;
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            dists[a]
                .total_cmp(&dists[b])
                .then(candidates[a].cmp(&candidates[b]))
        })
        .expect("at least two candidates");
    let positive = candidates[best];
    let mut negatives: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != best)
        .map(|(_, &c)| c)
        .collect();
    let negative = negatives.remove(0);
    let neg_dist = dists[candidates.iter().position(|&c| c == negative).unwrap()];
    Ok(Triplet {
        anchor,
        positive,
        negative,
        alpha: neg_dist - dists[best],
        extra_negatives: negatives,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Mat,
}

/// `∂ dis(a, b) / ∂a` for the cosine distance.
fn cosine_distance_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("projected behavior"));
    }
    let cos = dot(a, b) / (na * nb);
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| -(y / nb - cos * x / na) / na)
        .collect())
}

fn add_scaled(acc: &mut [f64], s: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

struct Projected<'p> {
    model: &'p ProjectionModel,
    pool: &'p SamplePool<'p>,
}

impl Projected<'_> {
    fn h(&self, i: usize) -> Result<Vec<f64>> {
        self.model.project(self.pool.point(i))
    }

    fn s(&self, i: usize) -> &[f64] {
        self.pool.point(i)
    }
}

/// Loss of one sample and its gradient w.r.t. the projected vectors it
/// touches, accumulated into `grad` via `∂L/∂W += e (∂L/∂h)ᵀ`.
fn sample_loss(
    ctx: &Projected,
    t: &Triplet,
    spec: &LossSpec,
    grad: &mut Mat,
) -> Result<f64> {
    let mut push = |idx: usize, g: &[f64]| grad.add_outer(1.0, ctx.s(idx), g);
    match *spec {
        LossSpec::None => Ok(0.0),
        LossSpec::TripletsDynamic | LossSpec::TripletsFixed { .. } => {
            let margin = match *spec {
                LossSpec::TripletsFixed { alpha } => alpha,
                _ => t.alpha,
            };
            let (hi, hp, hn) = (ctx.h(t.anchor)?, ctx.h(t.positive)?, ctx.h(t.negative)?);
            let value = cosine_distance(&hi, &hp)? - cosine_distance(&hi, &hn)? + margin;
            if value <= 0.0 {
                return Ok(0.0);
            }
            let mut gi = cosine_distance_grad(&hi, &hp)?;
            add_scaled(&mut gi, -1.0, &cosine_distance_grad(&hi, &hn)?);
            push(t.anchor, &gi);
            push(t.positive, &cosine_distance_grad(&hp, &hi)?);
            let mut gn = cosine_distance_grad(&hn, &hi)?;
            gn.iter_mut().for_each(|x| *x = -*x);
            push(t.negative, &gn);
            Ok(value)
        }
        LossSpec::Mse => {
            let hi = ctx.h(t.anchor)?;
            let mut total = 0.0;
            for j in [t.positive, t.negative] {
                let hj = ctx.h(j)?;
                let diff = cosine_distance(&hi, &hj)? - cosine_distance(ctx.s(t.anchor), ctx.s(j))?;
                total += diff * diff;
                let mut gi = cosine_distance_grad(&hi, &hj)?;
                gi.iter_mut().for_each(|x| *x *= 2.0 * diff);
                push(t.anchor, &gi);
                let mut gj = cosine_distance_grad(&hj, &hi)?;
                gj.iter_mut().for_each(|x| *x *= 2.0 * diff);
                push(j, &gj);
            }
            Ok(total)
        }
        LossSpec::NPairMc { .. } => {
            let hi = ctx.h(t.anchor)?;
            let hp = ctx.h(t.positive)?;
            let negs: Vec<(usize, Vec<f64>)> = t
                .negatives()
                .map(|n| ctx.h(n).map(|h| (n, h)))
                .collect::<Result<_>>()?;
            let hi_hp = dot(&hi, &hp);
            let z: Vec<f64> = negs.iter().map(|(_, hn)| dot(&hi, hn) - hi_hp).collect();
            // log(1 + Σ exp z) via log-sum-exp over {0} ∪ z
            let zmax = z.iter().copied().fold(0.0, f64::max);
            let denom = (-zmax).exp() + z.iter().map(|v| (v - zmax).exp()).sum::<f64>();
            let loss = zmax + denom.ln();
            let q: Vec<f64> = z.iter().map(|v| (v - zmax).exp() / denom).collect();
            let m = hi.len();
            let mut gi = vec![0.0; m];
            let mut gp = vec![0.0; m];
            for ((n, hn), &qn) in negs.iter().zip(&q) {
                for c in 0..m {
                    gi[c] += qn * (hn[c] - hp[c]);
                    gp[c] -= qn * hi[c];
                }
                let gn: Vec<f64> = hi.iter().map(|x| qn * x).collect();
                push(*n, &gn);
            }
            push(t.anchor, &gi);
            push(t.positive, &gp);
            Ok(loss)
        }
    }
}

const GRAD_CHUNK: usize = 64;

fn pairwise_reduce(mut parts: Vec<(f64, Mat)>) -> (f64, Mat) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((la, mut ga)) = it.next() {
            if let Some((lb, gb)) = it.next() {
                ga.add_assign(&gb);
                next.push((la + lb, ga));
            } else {
                next.push((la, ga));
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one part")
}

/// Summed loss over `triplets` and its exact gradient w.r.t. `W_h`. Chunk
/// partial sums are combined pairwise in a fixed order, so the result does
/// not depend on the worker count.
pub fn loss_and_grad(
    model: &ProjectionModel,
    triplets: &[Triplet],
    pool: &SamplePool,
    spec: &LossSpec,
) -> Result<LossGrad> {
    let (d, m) = (model.d(), model.m());
    if triplets.is_empty() || matches!(spec, LossSpec::None) {
        return Ok(LossGrad {
            loss: 0.0,
            grad: Mat::zeros(d, m),
        });
    }
    let ctx = Projected { model, pool };
    let parts = triplets
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = Mat::zeros(d, m);
            let mut loss = 0.0;
            for t in chunk {
                loss += sample_loss(&ctx, t, spec, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, grad) = pairwise_reduce(parts);
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub sampling: SamplingStrategy,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub aux_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::TripletsDynamic,
            sampling: SamplingStrategy::WithinSequence,
            steps: 2000,
            lr: 1e-4,
            batch_size: 1024,
            aux_weight: 0.1,
        }
    }
}

/// Adam on `aux_weight · mean(L_aux)` over `batch_size` uniformly drawn
/// anchors per step, with triplets resampled every step. Anchors whose pool
/// is too small are skipped.
pub fn train_projection(
    mut model: ProjectionModel,
    pool: &SamplePool,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<ProjectionModel> {
    if cfg.steps == 0 || matches!(cfg.loss, LossSpec::None) {
        return Ok(model);
    }
    if pool.is_empty() {
        return Err(Error::EmptyInput("train_projection"));
    }
    if pool.points().first().map(|p| p.len()) != Some(model.d()) {
        return Err(Error::dim(model.d(), pool.point(0).len()));
    }
    let mut adam = Adam::new(model.d() * model.m(), cfg.lr);
    let first_step = model.log.last().map_or(0, |&(s, _)| s + 1);
    let n_neg = cfg.loss.n_negatives();
    for step in 0..cfg.steps {
        let mut anchors: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(pool.len())).collect();
        let mut batch = anchors.clone();
        batch.sort_unstable();
        batch.dedup();
        let mut triplets = Vec::with_capacity(anchors.len());
        for a in anchors.drain(..) {
            match select_tuple(pool, &batch, a, cfg.sampling, n_neg, rng) {
                Ok(t) => triplets.push(t),
                Err(Error::Sampling(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if triplets.is_empty() {
            return Err(Error::Sampling(
                "no anchor in the batch has enough candidates".into(),
            ));
        }
        let LossGrad { loss, mut grad } = loss_and_grad(&model, &triplets, pool, &cfg.loss)?;
        let scale = cfg.aux_weight / triplets.len() as f64;
        let loss = loss * scale;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Training {
                step: first_step + step,
                loss,
            });
        }
        grad.scale(scale);
        adam.step(model.weights.data_mut(), grad.data());
        model.log.push((first_step + step, loss));
    }
    if !model.weights.is_finite() {
        return Err(Error::Training {
            step: first_step + cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_projection(32, 4, &mut Rng::new(1)).unwrap();
        assert_eq!((a.d(), a.m()), (32, 4));
        let b = init_projection(32, 4, &mut Rng::new(1)).unwrap();
        assert_eq!(a.weights(), b.weights());
        let s = init_projection(1, 1, &mut Rng::new(1)).unwrap();
        assert_eq!(s.weights().data().len(), 1);
        assert!(matches!(
            init_projection(3, 4, &mut Rng::new(1)),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn project_delegates_to_matvec() {
        let w = Mat::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let model = ProjectionModel::from_matrix(w);
        assert_eq!(model.project(&[3.0, 4.0]).unwrap(), vec![3.0]);
        assert!(model.project(&[1.0]).is_err());
    }

    #[test]
    fn select_triplet_orders_by_original_distance() {
        let anchor = [1.0, 0.0];
        let close = unit(&[0.9, 0.1]);
        let far = [-1.0, 0.0];
        let pool = SamplePool::single(vec![&anchor, &close, &far]);
        let t = select_triplet(&pool, &[], 0, SamplingStrategy::WithinSequence, &mut Rng::new(0))
            .unwrap();
        assert_eq!((t.positive, t.negative), (1, 2));
        // oracle: direct evaluation of 1 − cos on these vectors
        let dis_close = 1.0 - 0.9 / (0.9f64 * 0.9 + 0.1 * 0.1).sqrt();
        assert_abs_diff_eq!(dis_close, 0.006_116_265, epsilon = 1e-9);
        assert_abs_diff_eq!(t.alpha, 2.0 - dis_close, epsilon = 1e-12);
    }

    #[test]
    fn identical_candidates_have_zero_margin_and_lower_index_wins() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let pool = SamplePool::single(vec![&a, &b, &b]);
        for seed in 0..10 {
            let t = select_triplet(&pool, &[], 0, SamplingStrategy::WithinSequence, &mut Rng::new(seed))
                .unwrap();
            assert_eq!(t.alpha, 0.0);
            assert_eq!((t.positive, t.negative), (1, 2));
        }
    }

    #[test]
    fn neighbors_at_sequence_start_use_next_plus_uniform() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let pool = SamplePool::single(refs);
        for seed in 0..50 {
            let t = select_triplet(&pool, &[], 0, SamplingStrategy::WithinNeighbors, &mut Rng::new(seed))
                .unwrap();
            let mut got = [t.positive, t.negative];
            got.sort();
            assert!(got.contains(&1));
            assert!(!got.contains(&0));
        }
        let t = select_triplet(&pool, &[], 3, SamplingStrategy::WithinNeighbors, &mut Rng::new(0))
            .unwrap();
        let mut got = [t.positive, t.negative];
        got.sort();
        assert_eq!(got, [2, 4]);
    }

    #[test]
    fn small_pools_are_rejected() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let pool = SamplePool::single(vec![&a, &b]);
        assert!(matches!(
            select_triplet(&pool, &[], 0, SamplingStrategy::WithinSequence, &mut Rng::new(0)),
            Err(Error::Sampling(_))
        ));
        assert!(matches!(
            select_triplet(&pool, &[0, 1], 0, SamplingStrategy::WithinBatch, &mut Rng::new(0)),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn within_batch_draws_across_sequences() {
        let pts: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64 * 0.3]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let pool = SamplePool::new(vec![refs[..4].to_vec(), refs[4..].to_vec()]);
        let batch = [0, 5, 6];
        let mut saw_other_sequence = false;
        for seed in 0..20 {
            let t = select_triplet(&pool, &batch, 0, SamplingStrategy::WithinBatch, &mut Rng::new(seed))
                .unwrap();
            assert!(batch.contains(&t.positive) && batch.contains(&t.negative));
            assert_ne!(t.positive, 0);
            saw_other_sequence |= t.positive >= 4;
        }
        assert!(saw_other_sequence);
    }

    #[test]
    fn hinge_arithmetic() {
        // dis(h_i,h_p)=0.3, dis(h_i,h_n)=0.4, α=0.7 → 0.6
        assert_abs_diff_eq!(f64::max(0.0, 0.3 - 0.4 + 0.7), 0.6, epsilon = 1e-15);
        // Same through loss_and_grad with an identity projection.
        let cos_p = 0.7f64;
        let cos_n = 0.6f64;
        let a = [1.0, 0.0];
        let p = [cos_p, (1.0 - cos_p * cos_p).sqrt()];
        let n = [cos_n, -(1.0 - cos_n * cos_n).sqrt()];
        let pool = SamplePool::single(vec![&a, &p, &n]);
        let model = ProjectionModel::from_matrix(Mat::identity(2));
        let t = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
            alpha: 0.7,
            extra_negatives: vec![],
        };
        let out = loss_and_grad(&model, &[t.clone()], &pool, &LossSpec::TripletsDynamic).unwrap();
        assert_abs_diff_eq!(out.loss, 0.6, epsilon = 1e-12);
        let fixed = loss_and_grad(&model, &[t], &pool, &LossSpec::TripletsFixed { alpha: 0.7 })
            .unwrap();
        assert_abs_diff_eq!(fixed.loss, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let a = [1.0, 0.2, -0.3];
        let b = [0.1, 1.0, 0.4];
        let pool = SamplePool::single(vec![&a, &b, &b]);
        let model = init_projection(3, 2, &mut Rng::new(2)).unwrap();
        let t = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
            alpha: 0.0,
            extra_negatives: vec![],
        };
        let out = loss_and_grad(&model, &[t], &pool, &LossSpec::TripletsDynamic).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    #[test]
    fn none_loss_is_zero() {
        let a = [1.0, 0.2];
        let pool = SamplePool::single(vec![&a, &a, &a]);
        let model = init_projection(2, 1, &mut Rng::new(2)).unwrap();
        let t = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
            alpha: 0.0,
            extra_negatives: vec![],
        };
        let out = loss_and_grad(&model, &[t], &pool, &LossSpec::None).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64, 0.5]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let pool = SamplePool::single(refs);
        let model = init_projection(3, 2, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let out = train_projection(model.clone(), &pool, &cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn projection_bytes_round_trip_and_detect_corruption() {
        let model = init_projection(5, 3, &mut Rng::new(9)).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"ENCP");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 + 15 * 8 + 4);
        let back = ProjectionModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.weights(), model.weights());
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(
            ProjectionModel::from_bytes(&bad),
            Err(Error::CorruptStore(_))
        ));
    }
}
