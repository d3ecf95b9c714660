//! Brute-force reference implementations and random instance generators
//! shared by the integration tests. Nothing here calls into the library's
//! numeric routines; the reference code works on plain `Vec<Vec<f64>>`.

#![allow(dead_code)]

use emoproj::token_model::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Points = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Small-integer points, so sums are exact and duplicates are common.
pub fn lattice_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| f64::from(rng.gen_range(-3i32..=3)))
                .collect()
        })
        .collect()
}

pub fn to_matrix(points: &Points) -> Matrix {
    Matrix::from_rows(points).unwrap()
}

pub fn to_points(m: &Matrix) -> Points {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefCluster {
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub centers: Vec<usize>,
    pub assignment: Vec<usize>,
    pub means: Points,
}

pub fn ref_density(z: &Points, k: usize) -> Vec<f64> {
    let n = z.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq(&z[i], &z[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut s = 0.0;
            for (d, _) in others.iter().take(k) {
                s += d;
            }
            (-(s / k as f64)).exp()
        })
        .collect()
}

pub fn ref_delta(z: &Points, rho: &[f64]) -> Vec<f64> {
    let n = z.len();
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| {
            let mut best: Option<f64> = None;
            let mut far = 0.0f64;
            for j in 0..n {
                let d = sq(&z[i], &z[j]);
                if d > far {
                    far = d;
                }
                let higher = rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
                if higher && best.is_none_or(|b| d < b) {
                    best = Some(d);
                }
            }
            best.unwrap_or(far)
        })
        .collect()
}

pub fn ref_centers(rho: &[f64], delta: &[f64], c: usize) -> Vec<usize> {
    let score: Vec<f64> = rho.iter().zip(delta).map(|(r, d)| r * d).collect();
    let mut taken = vec![false; score.len()];
    let mut picked = Vec::new();
    for _ in 0..c {
        let mut best: Option<usize> = None;
        for i in 0..score.len() {
            if !taken[i] && best.is_none_or(|b| score[i] > score[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        picked.push(b);
    }
    picked.sort();
    picked
}

pub fn ref_assign(z: &Points, centers: &[usize]) -> (Vec<usize>, Points) {
    let d = z[0].len();
    let assignment: Vec<usize> = (0..z.len())
        .map(|i| {
            if let Some(slot) = centers.iter().position(|&c| c == i) {
                return slot;
            }
            let mut best = 0;
            for s in 1..centers.len() {
                if sq(&z[i], &z[centers[s]]).sqrt() < sq(&z[i], &z[centers[best]]).sqrt() {
                    best = s;
                }
            }
            best
        })
        .collect();
    let means = (0..centers.len())
        .map(|s| {
            let mut acc = vec![0.0; d];
            let mut n = 0usize;
            for (i, &a) in assignment.iter().enumerate() {
                if a == s {
                    n += 1;
                    for k in 0..d {
                        acc[k] += z[i][k];
                    }
                }
            }
            acc.iter().map(|v| v / n as f64).collect()
        })
        .collect();
    (assignment, means)
}

pub fn ref_cluster(z: &Points, k: usize, c: usize) -> RefCluster {
    let rho = ref_density(z, k);
    let delta = ref_delta(z, &rho);
    let centers = ref_centers(&rho, &delta, c);
    let (assignment, means) = ref_assign(z, &centers);
    RefCluster {
        rho,
        delta,
        centers,
        assignment,
        means,
    }
}

pub fn ref_frame_means(frames: &[Points]) -> Points {
    frames
        .iter()
        .map(|f| {
            let d = f[0].len();
            (0..d)
                .map(|k| f.iter().map(|t| t[k]).sum::<f64>() / f.len() as f64)
                .collect()
        })
        .collect()
}

pub fn ref_matmul(a: &Points, b: &Points) -> Points {
    let m = b[0].len();
    a.iter()
        .map(|row| {
            (0..m)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// σ(D̂^{-1/2}(A+I)D̂^{-1/2} H W) layer by layer, computed edge-wise.
pub fn ref_gcn(
    features: &Points,
    adjacency: &[Vec<bool>],
    layers: &[Points],
    relu: bool,
) -> Points {
    let n = features.len();
    let deg: Vec<f64> = (0..n)
        .map(|i| {
            1.0 + adjacency[i]
                .iter()
                .enumerate()
                .filter(|(j, &a)| a && *j != i)
                .count() as f64
        })
        .collect();
    let mut h = features.clone();
    for w in layers {
        let hw = ref_matmul(&h, w);
        h = (0..n)
            .map(|i| {
                (0..hw[0].len())
                    .map(|c| {
                        let mut acc = hw[i][c] / deg[i];
                        for j in 0..n {
                            if j != i && adjacency[i][j] {
                                acc += hw[j][c] / (deg[i] * deg[j]).sqrt();
                            }
                        }
                        if relu {
                            acc.max(0.0)
                        } else {
                            acc
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}

/// Adjacency from points: Euclidean distance, min-max normalized, ≤ τ, no
/// diagonal.
pub fn ref_adjacency(points: &Points, tau: f64) -> Vec<Vec<bool>> {
    let n = points.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq(&points[i], &points[j]).sqrt()).collect())
        .collect();
    let max = dist.iter().flatten().cloned().fold(0.0, f64::max);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| i != j && (max == 0.0 || dist[i][j] / max <= tau))
                .collect()
        })
        .collect()
}

pub fn max_rel_diff(a: &Points, b: &Points) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            let scale = x.abs().max(y.abs()).max(1.0);
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}
