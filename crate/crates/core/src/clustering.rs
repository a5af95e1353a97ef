//! Partitioning of projected behaviors under the cosine distance.
//!
//! Every distance evaluated here goes through [`cosine_distance`]; centers
//! are unit vectors. Empty clusters are never returned: cluster ids are
//! compact in `0..k_eff`.

use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, norm, normalized, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Total within-cluster distance after each assignment pass.
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn k_eff(&self) -> usize {
        self.centers.len()
    }

    /// Member indices of every cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k_eff()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn objective(&self, points: &[Vec<f64>]) -> Result<f64> {
        objective(points, &self.assignments, &self.centers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusteringMethod {
    KMeans,
    Random,
    Agglomerative,
}

impl ClusteringMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kmeans" => Some(Self::KMeans),
            "random" => Some(Self::Random),
            "agglomerative" | "agg" => Some(Self::Agglomerative),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::KMeans => "kmeans",
            Self::Random => "random",
            Self::Agglomerative => "agglomerative",
        }
    }

    pub fn run(&self, points: &[Vec<f64>], k: usize, t: usize, rng: &mut Rng) -> Result<Clustering> {
        match self {
            Self::KMeans => kmeans(points, k, t, rng),
            Self::Random => random_clustering(points, k, rng),
            Self::Agglomerative => agglomerative(points, k),
        }
    }
}

fn objective(points: &[Vec<f64>], assignments: &[usize], centers: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (p, &a) in points.iter().zip(assignments) {
        total += cosine_distance(p, &centers[a])?;
    }
    Ok(total)
}

/// Normalized mean of the normalized members; maximizes the summed cosine
/// similarity to the members.
fn spherical_mean(points: &[Vec<f64>], members: impl Iterator<Item = usize>) -> Result<Vec<f64>> {
    let dim = points[0].len();
    let mut acc = vec![0.0; dim];
    for i in members {
        let n = norm(&points[i]);
        for (a, x) in acc.iter_mut().zip(&points[i]) {
            *a += x / n;
        }
    }
    normalized(&acc)
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("clustering"));
    }
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(Error::dim(dim, p.len()));
        }
        if norm(p) == 0.0 {
            return Err(Error::ZeroNorm("clustering input"));
        }
    }
    Ok(())
}

/// Distances below this are treated as coincident directions when seeding.
const COINCIDENT: f64 = 1e-12;

/// k-means++ seeding with squared cosine distance. Stops early once every
/// remaining point coincides with a chosen center, which caps the number of
/// clusters at the number of distinct directions.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let first = rng.below(points.len());
    let mut centers = vec![normalized(&points[first])?];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| cosine_distance(p, &centers[0]))
        .collect::<Result<_>>()?;
    while centers.len() < k {
        let weights: Vec<f64> = nearest
            .iter()
            .map(|&d| if d <= COINCIDENT { 0.0 } else { d * d })
            .collect();
        let Some(next) = rng.weighted_index(&weights) else {
            break;
        };
        let c = normalized(&points[next])?;
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(cosine_distance(p, &c)?);
        }
        centers.push(c);
    }
    Ok(centers)
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut assignments = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let mut best = (f64::INFINITY, 0);
        for (c, center) in centers.iter().enumerate() {
            let d = cosine_distance(p, center)?;
            if d < best.0 {
                best = (d, c);
            }
        }
        assignments.push(best.1);
        dists.push(best.0);
    }
    Ok((assignments, dists))
}

/// Drops clusters with no members and renumbers the rest compactly.
fn compact(assignments: &mut [usize], centers: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut counts = vec![0usize; centers.len()];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut remap = vec![usize::MAX; centers.len()];
    let mut kept = Vec::new();
    for (c, center) in centers.into_iter().enumerate() {
        if counts[c] > 0 {
            remap[c] = kept.len();
            kept.push(center);
        }
    }
    for a in assignments.iter_mut() {
        *a = remap[*a];
    }
    kept
}

/// Spherical k-means: k-means++ seeding, argmin-cosine assignment, centers
/// are normalized means. At most `t` assignment passes; stops early when an
/// assignment pass changes nothing. An empty cluster is reseeded with the
/// point farthest from its current center; on the final pass empty clusters
/// are dropped instead. The returned assignments are a fixed point of one
/// more assignment pass against the returned centers.
pub fn kmeans(points: &[Vec<f64>], k: usize, t: usize, rng: &mut Rng) -> Result<Clustering> {
    validate(points, k)?;
    if t == 0 {
        return Err(Error::Config("iteration count must be at least 1".into()));
    }
    let mut centers = seed_centers(points, k, rng)?;
    let mut trace = Vec::with_capacity(t);
    let mut previous: Option<Vec<usize>> = None;
    let mut assignments;
    let mut pass = 0;
    loop {
        pass += 1;
        let (mut a, mut dists) = assign(points, &centers)?;
        let last_pass = pass >= t;
        let mut reseeded = false;
        if !last_pass {
            let mut counts = vec![0usize; centers.len()];
            a.iter().for_each(|&c| counts[c] += 1);
            for c in 0..centers.len() {
                if counts[c] > 0 {
                    continue;
                }
                let (far, &far_d) = dists
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))
                    .expect("points nonempty");
                if far_d <= COINCIDENT {
                    break;
                }
                counts[a[far]] -= 1;
                a[far] = c;
                dists[far] = 0.0;
                counts[c] = 1;
                centers[c] = normalized(&points[far])?;
                reseeded = true;
            }
        }
        trace.push(dists.iter().sum::<f64>());
        let converged = !reseeded && previous.as_ref() == Some(&a);
        assignments = a;
        if converged || last_pass {
            break;
        }
        let members = {
            let mut m = vec![Vec::new(); centers.len()];
            assignments.iter().enumerate().for_each(|(i, &c)| m[c].push(i));
            m
        };
        for (c, mem) in members.iter().enumerate() {
            if !mem.is_empty() {
                centers[c] = spherical_mean(points, mem.iter().copied())?;
            }
        }
        previous = Some(assignments.clone());
    }
    let centers = compact(&mut assignments, centers);
    Ok(Clustering {
        assignments,
        centers,
        objective_trace: trace,
    })
}

/// Uniform random assignment; centers are the normalized member means.
pub fn random_clustering(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Clustering> {
    validate(points, k)?;
    let mut assignments: Vec<usize> = (0..points.len()).map(|_| rng.below(k)).collect();
    let placeholder = vec![vec![0.0]; k];
    compact(&mut assignments, placeholder);
    finish_with_means(points, assignments)
}

fn finish_with_means(points: &[Vec<f64>], assignments: Vec<usize>) -> Result<Clustering> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    assignments.iter().enumerate().for_each(|(i, &c)| members[c].push(i));
    let centers = members
        .iter()
        .map(|m| spherical_mean(points, m.iter().copied()))
        .collect::<Result<Vec<_>>>()?;
    let obj = objective(points, &assignments, &centers)?;
    Ok(Clustering {
        assignments,
        centers,
        objective_trace: vec![obj],
    })
}

/// Bottom-up average-linkage clustering under the cosine distance, cut when
/// `k` clusters remain. O(L³) time, O(L²) memory.
pub fn agglomerative(points: &[Vec<f64>], k: usize) -> Result<Clustering> {
    validate(points, k)?;
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&points[i], &points[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut label: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    while clusters > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if dist[i][j] < best.0 {
                    best = (dist[i][j], i, j);
                }
            }
        }
        let (_, i, j) = best;
        // Lance–Williams update for average linkage
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for x in (0..n).filter(|&x| alive[x] && x != i && x != j) {
            let d = (ni * dist[i][x] + nj * dist[j][x]) / (ni + nj);
            dist[i][x] = d;
            dist[x][i] = d;
        }
        alive[j] = false;
        size[i] += size[j];
        label.iter_mut().filter(|l| **l == j).for_each(|l| *l = i);
        clusters -= 1;
    }
    let mut remap = vec![usize::MAX; n];
    let mut next = 0;
    let assignments = label
        .iter()
        .map(|&l| {
            if remap[l] == usize::MAX {
                remap[l] = next;
                next += 1;
            }
            remap[l]
        })
        .collect();
    finish_with_means(points, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::metric_counts;

    fn jitter(base: &[f64], rng: &mut Rng, eps: f64) -> Vec<f64> {
        base.iter().map(|x| x + eps * rng.normal()).collect()
    }

    #[test]
    fn singleton_clusters_when_k_equals_len() {
        let mut rng = Rng::new(3);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| jitter(&[0.0; 4], &mut rng, 1.0)).collect();
        let c = kmeans(&pts, 12, 15, &mut Rng::new(0)).unwrap();
        assert_eq!(c.k_eff(), 12);
        let mut seen = c.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 12);
        assert!(c.objective(&pts).unwrap() < 1e-12);
    }

    #[test]
    fn single_cluster_center_is_normalized_mean() {
        let mut rng = Rng::new(4);
        let pts: Vec<Vec<f64>> = (0..9).map(|_| normalized(&jitter(&[1.0, 1.0, 0.0], &mut rng, 0.3)).unwrap()).collect();
        let c = kmeans(&pts, 1, 15, &mut Rng::new(0)).unwrap();
        assert_eq!(c.k_eff(), 1);
        let mut mean = vec![0.0; 3];
        for p in &pts {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / 9.0;
            }
        }
        let mean = normalized(&mean).unwrap();
        for (a, b) in c.centers[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_cap_effective_k() {
        let pts = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let c = kmeans(&pts, 5, 10, &mut Rng::new(1)).unwrap();
        assert_eq!(c.k_eff(), 2);
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
    }

    #[test]
    fn rejects_zero_norm_points() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(
            kmeans(&pts, 2, 5, &mut Rng::new(0)),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn assignments_are_a_fixed_point() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let pts: Vec<Vec<f64>> = (0..60).map(|_| jitter(&[0.0; 4], &mut rng, 1.0)).collect();
            for t in [1, 3, 15] {
                let c = kmeans(&pts, 7, t, &mut Rng::new(seed)).unwrap();
                let (again, _) = assign(&pts, &c.centers).unwrap();
                assert_eq!(again, c.assignments);
                assert!(c.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
                assert!(c.centers.iter().all(|x| (norm(x) - 1.0).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn only_cosine_distance_is_evaluated() {
        let mut rng = Rng::new(5);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| jitter(&[0.0; 4], &mut rng, 1.0)).collect();
        let before = metric_counts();
        kmeans(&pts, 5, 15, &mut Rng::new(0)).unwrap();
        agglomerative(&pts, 5).unwrap();
        random_clustering(&pts, 5, &mut Rng::new(0)).unwrap();
        let delta = metric_counts().since(before);
        assert!(delta.cosine > 0);
        assert_eq!(delta.scaled_dot, 0);
    }

    #[test]
    fn random_clustering_cases() {
        let mut rng = Rng::new(6);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| jitter(&[0.0; 3], &mut rng, 1.0)).collect();
        let one = random_clustering(&pts, 1, &mut Rng::new(0)).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));
        let many = random_clustering(&pts, 20, &mut Rng::new(0)).unwrap();
        assert!(many.k_eff() <= 10);
        assert_eq!(many, random_clustering(&pts, 20, &mut Rng::new(0)).unwrap());
        assert_eq!(many.members().iter().filter(|m| m.is_empty()).count(), 0);
    }

    #[test]
    fn agglomerative_two_points() {
        let pts = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let split = agglomerative(&pts, 2).unwrap();
        assert_eq!(split.k_eff(), 2);
        assert_ne!(split.assignments[0], split.assignments[1]);
        let merged = agglomerative(&pts, 1).unwrap();
        assert_eq!(merged.assignments, vec![0, 0]);
    }

    #[test]
    fn permuting_points_permutes_partition() {
        let mut rng = Rng::new(7);
        let bases = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let pts: Vec<Vec<f64>> = (0..30).map(|i| jitter(&bases[i % 3], &mut rng, 0.05)).collect();
        let mut perm: Vec<usize> = (0..30).collect();
        Rng::new(99).shuffle(&mut perm);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let a = kmeans(&pts, 3, 15, &mut Rng::new(1)).unwrap();
        let b = kmeans(&permuted, 3, 15, &mut Rng::new(1)).unwrap();
        for x in 0..30 {
            for y in 0..30 {
                let same_a = a.assignments[perm[x]] == a.assignments[perm[y]];
                let same_b = b.assignments[x] == b.assignments[y];
                assert_eq!(same_a, same_b);
            }
        }
    }
}
