//! Reference sequence-modeling strategies. Each produces a weight
//! distribution over the `L` original behaviors ([`StrategyWeights`]), which
//! is what the relevance indicator compares and what [`strategy_interest`]
//! pools into an interest vector.
//!
//! SDIM here is the slice-collision approximation: the `n` SimHash bits are
//! cut into slices of `slice_width` bits and a behavior's weight is
//! proportional to the number of slices on which its code equals the
//! target's.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, scaled_dot, softmax, weighted_sum, Mat, Relevance, Rng};
use crate::projection::ProjectionModel;

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyWeights {
    pub weights: Vec<f64>,
    /// True where the strategy kept the behavior.
    pub mask: Vec<bool>,
}

impl StrategyWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Dense weights with every behavior kept, e.g. ENCODE's final weights.
    pub fn dense(weights: Vec<f64>) -> Self {
        let mask = vec![true; weights.len()];
        StrategyWeights { weights, mask }
    }

    fn uniform_over(mask: Vec<bool>) -> Self {
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let weights = mask.iter().map(|&m| if m { 1.0 / n } else { 0.0 }).collect();
        StrategyWeights { weights, mask }
    }
}

fn check_sequence(s: &[&[f64]], target: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptyInput("behavior sequence"));
    }
    if let Some(b) = s.iter().find(|b| b.len() != target.len()) {
        return Err(Error::dim(target.len(), b.len()));
    }
    Ok(())
}

/// Softmax over `logits[i]` for the selected `i` (index order), zero elsewhere.
fn softmax_selected(logits: &[f64], mask: Vec<bool>) -> Result<StrategyWeights> {
    let picked: Vec<f64> = logits
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .collect();
    let probs = softmax(&picked)?;
    let mut weights = vec![0.0; mask.len()];
    let mut it = probs.into_iter();
    for (w, &m) in weights.iter_mut().zip(&mask) {
        if m {
            *w = it.next().expect("one probability per selected behavior");
        }
    }
    Ok(StrategyWeights { weights, mask })
}

/// Attention restricted to `mask`, evaluating the relevance only for kept
/// behaviors.
fn masked_attention(
    s: &[&[f64]],
    target: &[f64],
    mask: Vec<bool>,
    relevance: Relevance,
) -> Result<StrategyWeights> {
    let mut logits = vec![0.0; s.len()];
    for (i, b) in s.iter().enumerate() {
        if mask[i] {
            logits[i] = relevance.logit(b, target)?;
        }
    }
    softmax_selected(&logits, mask)
}

/// Full target attention over the entire sequence.
pub fn din_l_weights(s: &[&[f64]], target: &[f64], relevance: Relevance) -> Result<StrategyWeights> {
    check_sequence(s, target)?;
    masked_attention(s, target, vec![true; s.len()], relevance)
}

/// Short-sequence DIN: scaled-dot attention over the most recent `m`
/// behaviors only.
pub fn din_short_weights(s: &[&[f64]], target: &[f64], m: usize) -> Result<StrategyWeights> {
    check_sequence(s, target)?;
    let start = s.len().saturating_sub(m.max(1));
    let mask = (0..s.len()).map(|i| i >= start).collect();
    masked_attention(s, target, mask, Relevance::ScaledDot)
}

pub fn avg_pooling_weights(len: usize) -> StrategyWeights {
    StrategyWeights::uniform_over(vec![true; len])
}

/// `I = Σ pᵢ sᵢ`.
pub fn strategy_interest(weights: &StrategyWeights, s: &[&[f64]]) -> Vec<f64> {
    let dim = s.first().map_or(0, |b| b.len());
    weighted_sum(
        dim,
        weights
            .weights
            .iter()
            .zip(s)
            .filter(|(&w, _)| w != 0.0)
            .map(|(&w, b)| (w, *b)),
    )
}

/// Indices of the `k` smallest keys, ties broken by lower index, returned as
/// a mask.
fn top_k_mask(keys: &[f64], k: usize) -> Vec<bool> {
    let n = keys.len();
    let mut mask = vec![false; n];
    if k >= n {
        mask.iter_mut().for_each(|m| *m = true);
        return mask;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering { keys[*a].total_cmp(&keys[*b]).then(a.cmp(b)) };
    idx.select_nth_unstable_by(k, cmp);
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

/// Sign-of-random-projection hashing with `W_r ∈ ℝ^{d×n}` drawn from N(0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SimHasher {
    w_r: Mat,
}

/// `n`-bit codes packed little-endian into `u64` words; bit `j` is set when
/// projection `j` is nonnegative (`sign(0) = +1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCode(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq)]
pub struct HashCodes {
    pub n_bits: usize,
    pub codes: Vec<HashCode>,
}

impl SimHasher {
    pub fn new(d: usize, n_bits: usize, rng: &mut Rng) -> Result<Self> {
        if n_bits == 0 || d == 0 {
            return Err(Error::Config("hash needs at least one bit".into()));
        }
        Ok(SimHasher {
            w_r: Mat::standard_normal(d, n_bits, rng),
        })
    }

    pub fn from_matrix(w_r: Mat) -> Self {
        SimHasher { w_r }
    }

    pub fn n_bits(&self) -> usize {
        self.w_r.cols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.w_r
    }

    pub fn hash(&self, e: &[f64]) -> Result<HashCode> {
        let proj = self.w_r.matvec_t(e)?;
        let mut words = vec![0u64; proj.len().div_ceil(64)];
        for (j, p) in proj.iter().enumerate() {
            if *p >= 0.0 {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Ok(HashCode(words))
    }

    pub fn hash_all(&self, s: &[&[f64]]) -> Result<HashCodes> {
        Ok(HashCodes {
            n_bits: self.n_bits(),
            codes: s.iter().map(|e| self.hash(e)).collect::<Result<_>>()?,
        })
    }
}

impl HashCode {
    pub fn bit(&self, j: usize) -> bool {
        (self.0[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn hamming(&self, other: &HashCode) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// How ETA-style retrieval ranks behaviors before attention.
#[derive(Debug, Clone, Copy)]
pub enum Retrieval<'a> {
    /// Hamming distance between SimHash codes (ETA).
    SimHash(&'a HashCodes, &'a SimHasher),
    /// Cosine distance between learned projections (ETA-ENCODE).
    Projected(&'a [Vec<f64>], &'a ProjectionModel),
    /// Scaled dot-product on original embeddings (ETA-TA).
    ScaledDot,
}

/// Top-`k` retrieval (ties by lower index) followed by scaled-dot attention
/// over the retrieved behaviors.
pub fn eta_retrieve(
    s: &[&[f64]],
    target: &[f64],
    retrieval: Retrieval,
    k: usize,
) -> Result<StrategyWeights> {
    check_sequence(s, target)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let keys: Vec<f64> = match retrieval {
        Retrieval::SimHash(codes, hasher) => {
            let t = hasher.hash(target)?;
            codes.codes.iter().map(|c| c.hamming(&t) as f64).collect()
        }
        Retrieval::Projected(reduced, projection) => {
            let ht = projection.project(target)?;
            reduced
                .iter()
                .map(|h| cosine_distance(h, &ht))
                .collect::<Result<_>>()?
        }
        Retrieval::ScaledDot => return twin_weights(s, target, k),
    };
    masked_attention(s, target, top_k_mask(&keys, k), Relevance::ScaledDot)
}

/// Retrieval and attention with the same scaled dot-product, limited to `k`.
pub fn twin_weights(s: &[&[f64]], target: &[f64], k: usize) -> Result<StrategyWeights> {
    check_sequence(s, target)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let logits = s
        .iter()
        .map(|b| scaled_dot(b, target))
        .collect::<Result<Vec<f64>>>()?;
    let negated: Vec<f64> = logits.iter().map(|l| -l).collect();
    softmax_selected(&logits, top_k_mask(&negated, k))
}

/// Same-category retrieval: the most recent `k` behaviors sharing the
/// target's category, then scaled-dot attention. With no match, falls back
/// to uniform weights over the most recent `k` behaviors.
pub fn sim_hard_weights(
    s: &[&[f64]],
    categories: &[u32],
    target: &[f64],
    target_category: u32,
    k: usize,
) -> Result<StrategyWeights> {
    check_sequence(s, target)?;
    if categories.len() != s.len() {
        return Err(Error::dim(s.len(), categories.len()));
    }
    let mut mask = vec![false; s.len()];
    let mut kept = 0;
    for i in (0..s.len()).rev() {
        if kept == k {
            break;
        }
        if categories[i] == target_category {
            mask[i] = true;
            kept += 1;
        }
    }
    if kept == 0 {
        let start = s.len().saturating_sub(k);
        let fallback = (0..s.len()).map(|i| i >= start).collect();
        return Ok(StrategyWeights::uniform_over(fallback));
    }
    masked_attention(s, target, mask, Relevance::ScaledDot)
}

/// Slice-collision weights: `wᵢ ∝ #{slices where code(sᵢ) == code(x_t)}`.
/// All-zero collisions fall back to uniform.
pub fn sdim_weights(
    codes: &HashCodes,
    target_code: &HashCode,
    slice_width: usize,
) -> Result<StrategyWeights> {
    let n = codes.n_bits;
    if slice_width == 0 || n % slice_width != 0 {
        return Err(Error::Config(format!(
            "hash bits {n} not divisible by slice width {slice_width}"
        )));
    }
    if codes.codes.is_empty() {
        return Err(Error::EmptyInput("sdim"));
    }
    let counts: Vec<f64> = codes
        .codes
        .iter()
        .map(|c| {
            (0..n / slice_width)
                .filter(|j| {
                    (j * slice_width..(j + 1) * slice_width).all(|b| c.bit(b) == target_code.bit(b))
                })
                .count() as f64
        })
        .collect();
    let total: f64 = counts.iter().sum();
    let len = counts.len();
    if total == 0.0 {
        return Ok(avg_pooling_weights(len));
    }
    Ok(StrategyWeights {
        weights: counts.iter().map(|c| c / total).collect(),
        mask: vec![true; len],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normalized;

    fn random_seq(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| normalized(&(0..d).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap())
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn din_l_basic_cases() {
        let x = [0.6, 0.8];
        let one = [[1.0, 0.0]];
        let w = din_l_weights(&[&one[0]], &x, Relevance::ScaledDot).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        let same = [[0.3, 0.4]; 5];
        let s: Vec<&[f64]> = same.iter().map(|v| v.as_slice()).collect();
        let w = din_l_weights(&s, &x, Relevance::ScaledDot).unwrap();
        assert!(w.weights.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn din_l_unified_closed_form() {
        let x = [1.0, 0.0, 0.0];
        let s: Vec<Vec<f64>> = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]];
        let w = din_l_weights(&refs(&s), &x, Relevance::UnifiedSim { beta: 1.0 }).unwrap();
        let e = std::f64::consts::E;
        assert!((w.weights[0] - e / (e + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn avg_pooling_examples() {
        assert_eq!(avg_pooling_weights(1).weights, vec![1.0]);
        assert_eq!(avg_pooling_weights(4).weights, vec![0.25; 4]);
    }

    #[test]
    fn simhash_examples() {
        let w = Mat::from_vec(2, 1, vec![0.5, -0.2]).unwrap();
        let h = SimHasher::from_matrix(w);
        assert!(h.hash(&[1.0, 0.0]).unwrap().bit(0));
        // sign(0) = +1
        assert!(h.hash(&[0.0, 0.0]).unwrap().bit(0));
        let h = SimHasher::new(6, 70, &mut Rng::new(1)).unwrap();
        let e = [0.3, -1.0, 0.5, 2.0, -0.1, 0.7];
        let neg: Vec<f64> = e.iter().map(|x| -x).collect();
        let (a, b) = (h.hash(&e).unwrap(), h.hash(&neg).unwrap());
        assert_eq!(a.hamming(&b), 70);
    }

    #[test]
    fn retrieval_collapses_to_din_l_when_k_covers_sequence() {
        let s = random_seq(40, 8, 2);
        let x = &random_seq(1, 8, 3)[0];
        let full = din_l_weights(&refs(&s), x, Relevance::ScaledDot).unwrap();
        let hasher = SimHasher::new(8, 64, &mut Rng::new(4)).unwrap();
        let codes = hasher.hash_all(&refs(&s)).unwrap();
        assert_eq!(eta_retrieve(&refs(&s), x, Retrieval::SimHash(&codes, &hasher), 40).unwrap(), full);
        assert_eq!(twin_weights(&refs(&s), x, 100).unwrap(), full);
        let cats = vec![7u32; 40];
        assert_eq!(sim_hard_weights(&refs(&s), &cats, x, 7, 40).unwrap(), full);
    }

    #[test]
    fn k_one_puts_all_weight_on_nearest() {
        let s = random_seq(30, 8, 5);
        let x = &random_seq(1, 8, 6)[0];
        let hasher = SimHasher::new(8, 64, &mut Rng::new(4)).unwrap();
        let codes = hasher.hash_all(&refs(&s)).unwrap();
        let w = eta_retrieve(&refs(&s), x, Retrieval::SimHash(&codes, &hasher), 1).unwrap();
        assert_eq!(w.selected(), 1);
        let t = hasher.hash(x).unwrap();
        let best = (0..30).min_by_key(|&i| (codes.codes[i].hamming(&t), i)).unwrap();
        assert_eq!(w.weights[best], 1.0);

        let tw = twin_weights(&refs(&s), x, 1).unwrap();
        let arg = (0..30)
            .max_by(|&a, &b| {
                crate::numerics::dot(&s[a], x)
                    .total_cmp(&crate::numerics::dot(&s[b], x))
                    .then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(tw.weights[arg], 1.0);
    }

    #[test]
    fn twin_keeps_largest_logits() {
        let s = random_seq(25, 6, 8);
        let x = &random_seq(1, 6, 9)[0];
        let w = twin_weights(&refs(&s), x, 5).unwrap();
        let mut logits: Vec<(f64, usize)> = s.iter().enumerate().map(|(i, b)| (crate::numerics::dot(b, x), i)).collect();
        logits.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (rank, (_, i)) in logits.iter().enumerate() {
            assert_eq!(w.mask[*i], rank < 5);
        }
    }

    #[test]
    fn sim_hard_category_rules() {
        let s = random_seq(6, 4, 1);
        let x = &random_seq(1, 4, 2)[0];
        let cats = [1, 2, 1, 3, 1, 2];
        let w = sim_hard_weights(&refs(&s), &cats, x, 1, 2).unwrap();
        assert_eq!(w.mask, vec![false, false, true, false, true, false]);
        let w = sim_hard_weights(&refs(&s), &cats, x, 2, 10).unwrap();
        assert_eq!(w.mask, vec![false, true, false, false, false, true]);
        let none = sim_hard_weights(&refs(&s), &cats, x, 9, 4).unwrap();
        assert_eq!(none.mask, vec![false, false, true, true, true, true]);
        assert_eq!(none.weights[2..], [0.25; 4]);
    }

    #[test]
    fn sdim_identity_and_uniform_cases() {
        let s = random_seq(10, 8, 3);
        let hasher = SimHasher::new(8, 64, &mut Rng::new(1)).unwrap();
        let codes = hasher.hash_all(&refs(&s)).unwrap();
        let target = hasher.hash(&s[4]).unwrap();
        let w = sdim_weights(&codes, &target, 2).unwrap();
        let max = w.weights.iter().copied().fold(0.0, f64::max);
        assert_eq!(w.weights[4], max);
        let same = vec![s[0].clone(); 5];
        let codes = hasher.hash_all(&refs(&same)).unwrap();
        let w = sdim_weights(&codes, &hasher.hash(&s[1]).unwrap(), 2).unwrap();
        assert!(w.weights.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!(sdim_weights(&codes, &target, 3).is_err());
    }

    #[test]
    fn sdim_invariant_to_slice_permutation() {
        let d = 8;
        let s = random_seq(20, d, 11);
        let x = &random_seq(1, d, 12)[0];
        let hasher = SimHasher::new(d, 64, &mut Rng::new(2)).unwrap();
        let width = 4;
        let mut slices: Vec<usize> = (0..64 / width).collect();
        Rng::new(5).shuffle(&mut slices);
        let w_r = hasher.matrix();
        let mut permuted = Mat::zeros(d, 64);
        for (new_slice, &old_slice) in slices.iter().enumerate() {
            for b in 0..width {
                for r in 0..d {
                    permuted.set(r, new_slice * width + b, w_r.get(r, old_slice * width + b));
                }
            }
        }
        let other = SimHasher::from_matrix(permuted);
        let a = sdim_weights(&hasher.hash_all(&refs(&s)).unwrap(), &hasher.hash(x).unwrap(), width).unwrap();
        let b = sdim_weights(&other.hash_all(&refs(&s)).unwrap(), &other.hash(x).unwrap(), width).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strategy_interest_cases() {
        let s = random_seq(3, 4, 1);
        let one_hot = StrategyWeights::dense(vec![0.0, 1.0, 0.0]);
        assert_eq!(strategy_interest(&one_hot, &refs(&s)), s[1]);
        let mean = strategy_interest(&avg_pooling_weights(3), &refs(&s));
        for c in 0..4 {
            let want = (s[0][c] + s[1][c] + s[2][c]) / 3.0;
            assert!((mean[c] - want).abs() < 1e-15);
        }
    }
}
