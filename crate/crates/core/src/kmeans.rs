//! k-means++ seeding followed by Lloyd iterations.
//!
//! Shared by the RVQ codec (one run per stage) and the semantic codebook.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, sq_dist, View};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once `‖ΔC‖ / ‖C‖` drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 50,
            tolerance: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Mean squared distance of each point to its centroid.
    pub mse: f64,
}

/// Index of the nearest centroid and its squared distance. Ties go to the
/// lowest index.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn kmeans(data: &[f64], dim: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if dim == 0 || params.k == 0 {
        return Err(Error::Config("k-means needs k > 0 and dim > 0".into()));
    }
    let n = data.len() / dim;
    if n < params.k {
        return Err(Error::InsufficientData {
            needed: params.k,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(data, dim, params.k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        iterations += 1;
        assign(data, dim, &centroids, &mut assignments, &mut dists);
        let updated = update(data, dim, params.k, &assignments, &dists);
        let shift: f64 = sq_dist(&updated, &centroids).sqrt();
        let scale: f64 = updated.iter().map(|x| x * x).sum::<f64>().sqrt();
        centroids = updated;
        if shift <= params.tolerance * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    assign(data, dim, &centroids, &mut assignments, &mut dists);
    let mse = dists.iter().sum::<f64>() / n as f64;
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
        mse,
    })
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = data
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against running off the end through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = data[pick * dim..(pick + 1) * dim].to_vec();
        for (w, p) in d2.iter_mut().zip(data.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

const ASSIGN_BLOCK: usize = 512;

/// Nearest-centroid assignment via `‖c‖² − 2·x·c`, then an exact distance for
/// the winner.
fn assign(data: &[f64], dim: usize, centroids: &[f64], out: &mut [usize], dists: &mut [f64]) {
    let k = centroids.len() / dim;
    let c_norms: Vec<f64> = centroids
        .chunks_exact(dim)
        .map(|c| c.iter().map(|x| x * x).sum())
        .collect();
    let c_view = View::new(centroids, k, dim).t();
    let mut scores = vec![0.0; ASSIGN_BLOCK * k];
    for (b, block) in data.chunks(ASSIGN_BLOCK * dim).enumerate() {
        let rows = block.len() / dim;
        gemm(-2.0, View::new(block, rows, dim), c_view, 0.0, &mut scores);
        for r in 0..rows {
            let row = &scores[r * k..(r + 1) * k];
            let mut best = 0;
            let mut best_score = f64::INFINITY;
            for (j, (&s, &cn)) in row.iter().zip(&c_norms).enumerate() {
                let v = s + cn;
                if v < best_score {
                    best_score = v;
                    best = j;
                }
            }
            let i = b * ASSIGN_BLOCK + r;
            out[i] = best;
            dists[i] = sq_dist(&block[r * dim..(r + 1) * dim], &centroids[best * dim..(best + 1) * dim]);
        }
    }
}

fn update(data: &[f64], dim: usize, k: usize, assignments: &[usize], dists: &[f64]) -> Vec<f64> {
    // Means are accumulated as offsets from each cluster's first member, so a
    // cluster of identical points reproduces that point exactly.
    let mut anchor = vec![usize::MAX; k];
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, (p, &a)) in data.chunks_exact(dim).zip(assignments).enumerate() {
        if anchor[a] == usize::MAX {
            anchor[a] = i;
        }
        counts[a] += 1;
        let base = &data[anchor[a] * dim..(anchor[a] + 1) * dim];
        for ((s, &x), &b) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p).zip(base) {
            *s += x - b;
        }
    }
    let mut taken = vec![false; dists.len()];
    for j in 0..k {
        if counts[j] > 0 {
            let n = counts[j] as f64;
            let base = &data[anchor[j] * dim..(anchor[j] + 1) * dim];
            for (s, &b) in sums[j * dim..(j + 1) * dim].iter_mut().zip(base) {
                *s = b + *s / n;
            }
        } else {
            // empty cluster: re-seed at the point farthest from its centroid
            let far = dists
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                .0;
            taken[far] = true;
            sums[j * dim..(j + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_centroid_is_the_mean() {
        let data = lcg_points(100, 3, 1);
        let r = kmeans(&data, 3, &KMeansParams::new(1, 9)).unwrap();
        for d in 0..3 {
            let mean: f64 = data.iter().skip(d).step_by(3).sum::<f64>() / 100.0;
            assert!((r.centroids[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_repeated_support_exactly() {
        let support = lcg_points(8, 4, 2);
        let mut data = Vec::new();
        for rep in 0..5 {
            for i in 0..8 {
                let j = (i * 3 + rep) % 8;
                data.extend_from_slice(&support[j * 4..(j + 1) * 4]);
            }
        }
        let r = kmeans(&data, 4, &KMeansParams::new(8, 5)).unwrap();
        assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn insufficient_data() {
        let data = lcg_points(3, 2, 1);
        assert!(matches!(
            kmeans(&data, 2, &KMeansParams::new(4, 0)),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = lcg_points(500, 5, 3);
        let a = kmeans(&data, 5, &KMeansParams::new(16, 42)).unwrap();
        let b = kmeans(&data, 5, &KMeansParams::new(16, 42)).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let centroids = [0.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        assert_eq!(nearest(&[0.0, 0.0], &centroids, 2).0, 0);
        assert_eq!(nearest(&[0.0, 5.0], &centroids[2..], 2).0, 0);
    }

    #[test]
    fn mse_never_exceeds_variance() {
        let data = lcg_points(400, 3, 4);
        let one = kmeans(&data, 3, &KMeansParams::new(1, 1)).unwrap();
        let many = kmeans(&data, 3, &KMeansParams::new(10, 1)).unwrap();
        assert!(many.mse <= one.mse);
    }
}
