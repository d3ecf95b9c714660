//! Density-peaks clustering with k-nearest-neighbour local density (DPC-KNN),
//! plus the video variant: frame pooling, event clustering and per-event
//! token expansion.
//!
//! Tie rules, applied everywhere:
//! - KNN excludes the query token; equal distances prefer the lower index.
//! - Among equal densities the lower-indexed token counts as denser.
//! - Equal center scores prefer the lower index.
//! - A token equidistant from several centers joins the lowest slot.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token_model::{FrameSequence, Matrix, TokenMatrix};

/// Neighbour count and number of clusters to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub center_count: usize,
}

impl KnnConfig {
    pub fn new(k: usize, center_count: usize) -> Self {
        Self { k, center_count }
    }

    /// Checks the config against a point count `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.center_count == 0 || self.center_count > n {
            return Err(Error::Parameter(format!(
                "center_count {} must be in 1..={n}",
                self.center_count
            )));
        }
        if n > 1 && (self.k == 0 || self.k > n - 1) {
            return Err(Error::Parameter(format!(
                "k {} must be in 1..={} for {n} points",
                self.k,
                n - 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    /// Center token indices, ascending. Slot `c` is `centers[c]`.
    pub centers: Vec<usize>,
    /// Slot of every token.
    pub assignment: Vec<usize>,
    /// C×d cluster means, row `c` for slot `c`.
    pub means: Matrix,
}

/// Squared Euclidean distances between all rows, as a flat L×L buffer.
pub fn squared_distances(tokens: &TokenMatrix) -> Vec<f64> {
    let n = tokens.rows();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let zi = tokens.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = squared_distance(zi, tokens.row(j));
            }
        }
    });
    out
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `true` when token `j` ranks as denser than token `i`.
#[inline]
fn denser(rho: &[f64], j: usize, i: usize) -> bool {
    match rho[j].partial_cmp(&rho[i]) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => j < i,
        _ => false,
    }
}

/// Local density ρ and distance index δ for every token.
///
/// ρ_i = exp(−mean squared distance to the K nearest other tokens).
/// δ_i = smallest squared distance to a denser token, or the largest squared
/// distance to any token for the densest one. A single token yields ρ = [1],
/// δ = [0] whatever K is.
pub fn density_and_delta(tokens: &TokenMatrix, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = tokens.rows();
    if n == 1 {
        return Ok((vec![1.0], vec![0.0]));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::Parameter(format!(
            "k {k} must be in 1..={} for {n} tokens",
            n - 1
        )));
    }
    let dist = squared_distances(tokens);
    let rho = knn_density(&dist, n, k);
    let delta = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let nearest_denser = (0..n)
                .filter(|&j| denser(&rho, j, i))
                .map(|j| row[j])
                .min_by(|a, b| a.total_cmp(b));
            nearest_denser.unwrap_or_else(|| row.iter().copied().fold(0.0, f64::max))
        })
        .collect();
    Ok((rho, delta))
}

fn knn_density(dist: &[f64], n: usize, k: usize) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let by_distance =
                |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then_with(|| a.cmp(b));
            if k < others.len() {
                others.select_nth_unstable_by(k - 1, by_distance);
                others.truncate(k);
            }
            others.sort_unstable_by(by_distance);
            let sum: f64 = others.iter().map(|&j| row[j]).sum();
            (-(sum / k as f64)).exp()
        })
        .collect()
}

/// Indices of the `center_count` largest ρ×δ scores, returned ascending.
pub fn select_centers(rho: &[f64], delta: &[f64], center_count: usize) -> Result<Vec<usize>> {
    if rho.len() != delta.len() {
        return Err(Error::Dimension(format!(
            "rho has {} entries, delta {}",
            rho.len(),
            delta.len()
        )));
    }
    let n = rho.len();
    if center_count == 0 || center_count > n {
        return Err(Error::Parameter(format!(
            "center_count {center_count} must be in 1..={n}"
        )));
    }
    let score: Vec<f64> = rho.iter().zip(delta).map(|(r, d)| r * d).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then_with(|| a.cmp(&b)));
    order.truncate(center_count);
    order.sort_unstable();
    Ok(order)
}

/// Assigns each token to its nearest center (Euclidean) and averages each
/// cluster. Center tokens always belong to their own slot, so no cluster is
/// empty even when centers coincide.
pub fn assign_and_average(tokens: &TokenMatrix, centers: &[usize]) -> Result<(Vec<usize>, Matrix)> {
    let n = tokens.rows();
    if centers.is_empty() {
        return Err(Error::Parameter("at least one center is required".into()));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
        return Err(Error::Parameter(format!(
            "center index {bad} out of range for {n} tokens"
        )));
    }
    let mut own_slot = vec![None; n];
    for (slot, &c) in centers.iter().enumerate() {
        if own_slot[c].replace(slot).is_some() {
            return Err(Error::Parameter(format!("center index {c} repeated")));
        }
    }
    let assignment: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            if let Some(slot) = own_slot[i] {
                return slot;
            }
            let zi = tokens.row(i);
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (slot, &c) in centers.iter().enumerate() {
                let d = squared_distance(zi, tokens.row(c)).sqrt();
                if d < best_dist {
                    best = slot;
                    best_dist = d;
                }
            }
            best
        })
        .collect();

    let d = tokens.cols();
    let mut sums = vec![0.0; centers.len() * d];
    let mut counts = vec![0usize; centers.len()];
    for (i, &slot) in assignment.iter().enumerate() {
        counts[slot] += 1;
        for (s, v) in sums[slot * d..(slot + 1) * d].iter_mut().zip(tokens.row(i)) {
            *s += v;
        }
    }
    for (slot, &count) in counts.iter().enumerate() {
        let c = count as f64;
        sums[slot * d..(slot + 1) * d]
            .iter_mut()
            .for_each(|s| *s /= c);
    }
    Ok((assignment, Matrix::from_parts(centers.len(), d, sums)))
}

/// Full DPC-KNN: density, distance index, center selection, assignment.
pub fn cluster_tokens(tokens: &TokenMatrix, config: KnnConfig) -> Result<ClusterResult> {
    config.validate(tokens.rows())?;
    let (rho, delta) = density_and_delta(tokens, config.k)?;
    let centers = select_centers(&rho, &delta, config.center_count)?;
    let (assignment, means) = assign_and_average(tokens, &centers)?;
    Ok(ClusterResult {
        rho,
        delta,
        centers,
        assignment,
        means,
    })
}

/// Mean-pools every frame into one M×d matrix of frame vectors.
pub fn frame_representations(video: &FrameSequence) -> Matrix {
    let d = video.dim();
    let data = video
        .frames()
        .iter()
        .flat_map(|f| f.column_mean())
        .collect();
    Matrix::from_parts(video.frame_count(), d, data)
}

/// Frames grouped into events. Frame indices are 0-based; each event is
/// sorted and events are ordered by their earliest frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPartition {
    events: Vec<Vec<usize>>,
}

impl EventPartition {
    /// Validates that `events` partition `0..frame_count` and normalizes order.
    pub fn new(mut events: Vec<Vec<usize>>, frame_count: usize) -> Result<Self> {
        let mut seen = vec![false; frame_count];
        for event in &mut events {
            if event.is_empty() {
                return Err(Error::Parameter("empty event".into()));
            }
            event.sort_unstable();
            for &m in event.iter() {
                if m >= frame_count || std::mem::replace(&mut seen[m], true) {
                    return Err(Error::Parameter(format!(
                        "frame {m} is out of range or in two events"
                    )));
                }
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::Parameter(format!("frame {m} belongs to no event")));
        }
        events.sort_by_key(|e| e[0]);
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Vec<usize>] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Clusters frame vectors into events with the same DPC-KNN as tokens.
///
/// The frame count of a clip is input-dependent, so `center_count` is capped
/// at M and `k` at M−1 instead of failing on short clips.
pub fn cluster_events(frame_reps: &Matrix, config: KnnConfig) -> Result<EventPartition> {
    let m = frame_reps.rows();
    if config.center_count == 0 || config.k == 0 {
        return Err(Error::Parameter(
            "event k and center_count must be positive".into(),
        ));
    }
    let effective = KnnConfig {
        k: config.k.min(m.saturating_sub(1)).max(1),
        center_count: config.center_count.min(m),
    };
    let result = cluster_tokens(frame_reps, effective)?;
    let mut events = vec![Vec::new(); result.centers.len()];
    for (frame, &slot) in result.assignment.iter().enumerate() {
        events[slot].push(frame);
    }
    EventPartition::new(events, m)
}

/// Pools the tokens of each event's frames, clusters each pool, and
/// concatenates the per-event cluster means in event order.
pub fn expand_event_tokens(
    video: &FrameSequence,
    partition: &EventPartition,
    per_event: KnnConfig,
) -> Result<TokenMatrix> {
    let blocks = partition
        .events()
        .par_iter()
        .enumerate()
        .map(|(n, frames)| {
            if let Some(&bad) = frames.iter().find(|&&m| m >= video.frame_count()) {
                return Err(Error::Parameter(format!(
                    "event {n} references frame {bad} of a {}-frame video",
                    video.frame_count()
                )));
            }
            let pooled: Vec<Matrix> = frames.iter().map(|&m| video.frames()[m].clone()).collect();
            let pooled = Matrix::vstack(&pooled)?;
            per_event.validate(pooled.rows()).map_err(|e| {
                Error::Parameter(format!("event {n} ({} pooled tokens): {e}", pooled.rows()))
            })?;
            Ok(cluster_tokens(&pooled, per_event)?.means)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn identical_pair_has_unit_density_and_zero_delta() {
        let (rho, delta) = density_and_delta(&line(&[2.0, 2.0]), 1).unwrap();
        assert_eq!(rho, vec![1.0, 1.0]);
        assert_eq!(delta, vec![0.0, 0.0]);
    }

    #[test]
    fn three_points_on_a_line() {
        // squared distances: (0,1)=1, (0,2)=100, (1,2)=81
        let (rho, delta) = density_and_delta(&line(&[0.0, 1.0, 10.0]), 1).unwrap();
        let e1 = (-1.0f64).exp();
        assert_eq!(rho, vec![e1, e1, (-81.0f64).exp()]);
        // token 0 wins the density tie and takes the max branch
        assert_eq!(delta, vec![100.0, 1.0, 81.0]);
    }

    #[test]
    fn single_token_is_degenerate_not_error() {
        let (rho, delta) = density_and_delta(&line(&[3.0]), 4).unwrap();
        assert_eq!((rho, delta), (vec![1.0], vec![0.0]));
    }

    #[test]
    fn k_out_of_range() {
        let t = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(density_and_delta(&t, 0), Err(Error::Parameter(_))));
        assert!(matches!(density_and_delta(&t, 3), Err(Error::Parameter(_))));
        assert!(density_and_delta(&t, 2).is_ok());
    }

    #[test]
    fn center_selection_examples() {
        let ones = [1.0; 3];
        assert_eq!(
            select_centers(&ones, &[5.0, 1.0, 3.0], 2).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            select_centers(&ones, &[2.0, 2.0, 2.0], 2).unwrap(),
            vec![0, 1]
        );
        assert!(select_centers(&ones, &ones, 4).is_err());
        assert!(select_centers(&ones, &ones, 0).is_err());
    }

    #[test]
    fn assignment_examples() {
        let t = line(&[0.0, 0.1, 10.0, 10.1]);
        let (assignment, means) = assign_and_average(&t, &[0, 2]).unwrap();
        assert_eq!(assignment, vec![0, 0, 1, 1]);
        assert!((means.get(0, 0) - 0.05).abs() < 1e-15);
        assert!((means.get(1, 0) - 10.05).abs() < 1e-15);

        let (a, m) = assign_and_average(&t, &[3]).unwrap();
        assert_eq!(a, vec![0; 4]);
        assert!((m.get(0, 0) - 5.05).abs() < 1e-12);

        // token 1 sits exactly between the centers at 0 and 2
        let (a, _) = assign_and_average(&line(&[0.0, 1.0, 2.0]), &[0, 2]).unwrap();
        assert_eq!(a, vec![0, 0, 1]);
    }

    #[test]
    fn coincident_centers_keep_their_own_slots() {
        let (a, m) = assign_and_average(&line(&[4.0, 4.0, 4.0]), &[0, 1]).unwrap();
        assert_eq!(a, vec![0, 1, 0]);
        assert_eq!(m.data(), &[4.0, 4.0]);
    }

    #[test]
    fn separated_pairs_cluster_to_pair_values() {
        let r = cluster_tokens(&line(&[1.0, 1.0, 9.0, 9.0]), KnnConfig::new(1, 2)).unwrap();
        let mut means = r.means.data().to_vec();
        means.sort_by(f64::total_cmp);
        assert_eq!(means, vec![1.0, 9.0]);
    }

    #[test]
    fn every_token_its_own_cluster() {
        let t = Matrix::from_rows(&[[0.5, 1.0], [3.0, -2.0], [7.0, 7.0]]).unwrap();
        let r = cluster_tokens(&t, KnnConfig::new(1, 3)).unwrap();
        assert_eq!(r.centers, vec![0, 1, 2]);
        assert_eq!(r.means, t);
    }

    #[test]
    fn frame_pooling() {
        let v = FrameSequence::new(vec![Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap()])
            .unwrap();
        assert_eq!(frame_representations(&v).data(), &[1.0, 1.0]);
        let same = FrameSequence::new(vec![Matrix::from_rows(&[[3.0, -1.0]; 4]).unwrap()]).unwrap();
        assert_eq!(frame_representations(&same).data(), &[3.0, -1.0]);
    }

    #[test]
    fn event_clustering_examples() {
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = cluster_events(&one, KnnConfig::new(3, 4)).unwrap();
        assert_eq!(p.events(), &[vec![0]]);

        let reps = line(&[0.0, 0.0, 50.0, 50.0]);
        let p = cluster_events(&reps, KnnConfig::new(1, 2)).unwrap();
        assert_eq!(p.events(), &[vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn partition_validation() {
        assert!(EventPartition::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(EventPartition::new(vec![vec![1]], 2).is_err());
        let p = EventPartition::new(vec![vec![3, 2], vec![1, 0]], 4).unwrap();
        assert_eq!(p.events(), &[vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn expansion_orders_blocks_by_event() {
        let f = |v: f64| Matrix::from_rows(&[[v], [v + 1.0], [v + 2.0]]).unwrap();
        let video = FrameSequence::new(vec![f(0.0), f(100.0), f(200.0)]).unwrap();
        let p = EventPartition::new(vec![vec![2], vec![0, 1]], 3).unwrap();
        let out = expand_event_tokens(&video, &p, KnnConfig::new(1, 1)).unwrap();
        assert_eq!(out.rows(), 2);
        assert!((out.get(0, 0) - 51.0).abs() < 1e-12);
        assert!((out.get(1, 0) - 201.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_names_the_short_event() {
        let video = FrameSequence::new(vec![line(&[0.0, 1.0]), line(&[5.0, 6.0])]).unwrap();
        let p = EventPartition::new(vec![vec![0, 1]], 2).unwrap();
        assert!(expand_event_tokens(&video, &p, KnnConfig::new(1, 4)).is_ok());
        let p = EventPartition::new(vec![vec![0], vec![1]], 2).unwrap();
        let err = expand_event_tokens(&video, &p, KnnConfig::new(1, 3)).unwrap_err();
        assert!(err.to_string().contains("event 0"), "{err}");
    }
}
