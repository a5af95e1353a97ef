#![allow(dead_code)]

use encode_core::numerics::Rng;

pub fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    unit(&gaussian(d, rng))
}

/// Independent cosine distance, not routed through the library.
pub fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// `c + noise` renormalized, noise ~ N(0, scale²) per coordinate.
pub fn jitter(c: &[f64], scale: f64, rng: &mut Rng) -> Vec<f64> {
    unit(&c.iter().map(|x| x + scale * rng.normal()).collect::<Vec<_>>())
}

/// Unit vector at `theta` radians from `a` (which must be unit).
pub fn at_angle(a: &[f64], theta: f64, rng: &mut Rng) -> Vec<f64> {
    let r = gaussian(a.len(), rng);
    let proj: f64 = r.iter().zip(a).map(|(x, y)| x * y).sum();
    let perp = unit(&r.iter().zip(a).map(|(x, y)| x - proj * y).collect::<Vec<_>>());
    a.iter()
        .zip(&perp)
        .map(|(x, p)| theta.cos() * x + theta.sin() * p)
        .collect()
}

/// Fraction of point pairs on which two partitions agree (same/different).
pub fn pairwise_agreement(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}
