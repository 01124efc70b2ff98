//! Lloyd's k-means with k-means++ seeding.
//!
//! Seeding can continue from a set of existing centers ("warm start"), which
//! is how nested codebooks are grown: a larger codebook seeded with the
//! centers of a smaller one can only lower the quantization error.

use rand::Rng;

use super::codebook::{nearest_centroid, sq_dist};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k * dim` centroid values, row-major.
    pub centroids: Vec<f32>,
    /// Number of centroids that had to duplicate an existing one because the
    /// data has fewer distinct points than `k`.
    pub duplicates: usize,
    pub iterations: usize,
    /// Assignment of each point after the final update.
    pub assignment: Vec<usize>,
}

/// Clusters `points` (row-major, `dim` wide) into `k` centroids.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[f32],
    dim: usize,
    k: usize,
    warm_start: &[f32],
    max_iters: usize,
    rng: &mut R,
) -> KMeansResult {
    assert!(dim > 0 && k > 0 && !points.is_empty() && points.len().is_multiple_of(dim));
    let (mut centroids, duplicates) = seed_plus_plus(points, dim, k, warm_start, rng);
    let n = points.len() / dim;
    let mut assignment = vec![usize::MAX; n];
    let mut dist = vec![0f32; n];
    let mut iterations = 0;

    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest_centroid(&centroids, dim, p);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dist[i] = d;
        }
        if !changed {
            break;
        }
        iterations += 1;

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += f64::from(*x);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            } else if let Some(far) = farthest(&dist) {
                // Empty cluster: move it onto the worst-served point.
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&points[far * dim..(far + 1) * dim]);
                dist[far] = 0.0;
            }
        }
    }

    KMeansResult {
        centroids,
        duplicates,
        iterations,
        assignment,
    }
}

fn farthest(dist: &[f32]) -> Option<usize> {
    let mut best = None;
    let mut best_d = 0f32;
    for (i, &d) in dist.iter().enumerate() {
        if d > best_d {
            best = Some(i);
            best_d = d;
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(
    points: &[f32],
    dim: usize,
    k: usize,
    warm_start: &[f32],
    rng: &mut R,
) -> (Vec<f32>, usize) {
    let n = points.len() / dim;
    let mut centroids: Vec<f32> = warm_start[..warm_start.len().min(k * dim)].to_vec();
    let mut duplicates = 0;
    if centroids.is_empty() {
        let first = rng.random_range(0..n);
        centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    }
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| f64::from(nearest_centroid(&centroids, dim, p).1))
        .collect();

    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    chosen = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            chosen.expect("positive total weight")
        } else {
            duplicates += 1;
            rng.random_range(0..n)
        };
        let p = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(p);
        for (w, q) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *w = w.min(f64::from(sq_dist(p, q)));
        }
    }
    (centroids, duplicates)
}
