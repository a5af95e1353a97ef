//! Dense vector/matrix helpers, the cosine metric family, softmax and the
//! seeded random stream shared by every other module.
//!
//! Vectors are plain `&[f64]` slices. All metric evaluations go through
//! [`cosine_distance`] or [`scaled_dot`], which bump a per-thread counter so
//! callers can assert how many relevance evaluations an operation performs.

use std::cell::Cell;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricCounts {
    pub cosine: u64,
    pub scaled_dot: u64,
}

impl MetricCounts {
    pub fn total(&self) -> u64 {
        self.cosine + self.scaled_dot
    }

    pub fn since(&self, earlier: MetricCounts) -> MetricCounts {
        MetricCounts {
            cosine: self.cosine - earlier.cosine,
            scaled_dot: self.scaled_dot - earlier.scaled_dot,
        }
    }
}

thread_local! {
    static COSINE_CALLS: Cell<u64> = const { Cell::new(0) };
    static DOT_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Metric evaluations performed on the current thread so far.
pub fn metric_counts() -> MetricCounts {
    MetricCounts {
        cosine: COSINE_CALLS.with(Cell::get),
        scaled_dot: DOT_CALLS.with(Cell::get),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `a / ‖a‖₂`.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm("normalize"));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    Ok(())
}

/// `1 − a·b / (‖a‖‖b‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    COSINE_CALLS.with(|c| c.set(c.get() + 1));
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm("cosine_distance"));
    }
    let cos = ab / (aa.sqrt() * bb.sqrt());
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// The unified similarity `(1 − dis(a, b)) / beta`.
pub fn sim(a: &[f64], b: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    Ok((1.0 - cosine_distance(a, b)?) / beta)
}

/// Standard attention logit `a·b / √d`.
pub fn scaled_dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    DOT_CALLS.with(|c| c.set(c.get() + 1));
    Ok(dot(a, b) / (a.len() as f64).sqrt())
}

/// Relevance function used inside an attention module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relevance {
    /// `a·b / √d`, as in standard target attention.
    ScaledDot,
    /// `(1 − dis(a, b)) / beta` with the cosine distance.
    UnifiedSim { beta: f64 },
}

impl Relevance {
    pub fn logit(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match *self {
            Relevance::ScaledDot => scaled_dot(a, b),
            Relevance::UnifiedSim { beta } => sim(a, b, beta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Relevance::ScaledDot => "scaled-dot",
            Relevance::UnifiedSim { .. } => "unified-sim",
        }
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ wᵢ · vᵢ` over rows of equal dimension.
pub fn weighted_sum<'a, I>(dim: usize, terms: I) -> Vec<f64>
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut out = vec![0.0; dim];
    for (w, v) in terms {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Pairwise (cascade) summation. Result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("matrix entries must be finite".into()));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Entries drawn i.i.d. from N(0, 1).
    pub fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` copied out.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Computes `Wᵀe` for `W` of shape rows×cols and `e` of length rows.
    pub fn matvec_t(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.rows {
            return Err(Error::dim(self.rows, e.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &x) in e.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * x;
            }
        }
        Ok(out)
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, &vc) in row.iter_mut().zip(v) {
                *x += scale * ur * vc;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded ChaCha8 stream. `split` derives independent child streams from the
/// seed alone, so the child for a given key does not depend on how much of the
/// parent has been consumed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, key: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(key.wrapping_add(0x5EED))))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Index drawn proportionally to `weights` (nonnegative, not all zero).
    pub fn weighted_index(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut target = self.uniform() * total;
        let mut last_positive = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                if target < w {
                    return Some(i);
                }
                target -= w;
                last_positive = Some(i);
            }
        }
        last_positive
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use super::Rng;
    use rand::RngCore;

    #[test]
    fn cosine_distance_examples() {
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let v = [0.3, -1.2, 4.0];
        assert_abs_diff_eq!(cosine_distance(&v, &v).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_distance_rejects_zero_norm() {
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 0.0]),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn sim_examples() {
        let v = [0.5, 0.5];
        assert_abs_diff_eq!(sim(&v, &v, 20.0).unwrap(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(sim(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(sim(&[1.0, 0.0], &[-1.0, 0.0], 2.0).unwrap(), -0.5);
        assert!(sim(&[1.0, 0.0], &[-1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[-3.7]).unwrap(), vec![1.0]);
        let p = softmax(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
        assert!(matches!(softmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matvec_t_examples() {
        let w = Mat::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(w.matvec_t(&[3.0, 4.0]).unwrap(), vec![3.0]);
        let e = [0.1, -2.0, 7.5];
        assert_eq!(Mat::identity(3).matvec_t(&e).unwrap(), e.to_vec());
        assert_eq!(Mat::zeros(3, 2).matvec_t(&e).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(w.matvec_t(&[1.0]), Err(Error::Dim { .. })));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let parent = Rng::new(7);
        let mut used = parent.clone();
        for _ in 0..100 {
            used.next_u64();
        }
        assert_eq!(parent.split(3).next_u64(), used.split(3).next_u64());
        assert_ne!(parent.split(3).next_u64(), parent.split(4).next_u64());
    }

    #[test]
    fn weighted_index_skips_zero_weights() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let i = rng.weighted_index(&[0.0, 2.0, 0.0, 1.0]).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(rng.weighted_index(&[0.0, 0.0]), None);
    }

    #[test]
    fn metric_counter_tracks_calls() {
        let before = metric_counts();
        cosine_distance(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        scaled_dot(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        scaled_dot(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        let delta = metric_counts().since(before);
        assert_eq!(delta, MetricCounts { cosine: 1, scaled_dot: 2 });
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_distance_symmetric_and_scale_invariant(
            a in vec_strategy(5), b in vec_strategy(5), alpha in 0.01f64..100.0
        ) {
            let ab = cosine_distance(&a, &b).unwrap();
            let ba = cosine_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=2.0).contains(&ab));
            let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            prop_assert!((cosine_distance(&scaled, &b).unwrap() - ab).abs() <= 1e-12);
            prop_assert!(cosine_distance(&a, &a).unwrap() <= 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -100.0f64..100.0
        ) {
            let p = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn matvec_t_linear(
            w in prop::collection::vec(-3.0f64..3.0, 12),
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let m = Mat::from_vec(4, 3, w).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = m.matvec_t(&sum).unwrap();
            let fa = m.matvec_t(&a).unwrap();
            let fb = m.matvec_t(&b).unwrap();
            for i in 0..3 {
                prop_assert!((lhs[i] - fa[i] - fb[i]).abs() <= 1e-10);
            }
        }
    }
}
