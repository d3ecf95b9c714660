//! Relation graph over cluster means and the GCN that runs on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density_peaks::squared_distance;
use crate::error::{Error, Result};
use crate::token_model::Matrix;

/// Square symmetric matrix with a separate type from [`Matrix`] because it
/// may be all zeros and is indexed by node pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> SquareMatrix<T> {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let data = (0..n * n).map(|idx| f(idx / n, idx % n)).collect();
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

pub type DistanceMatrix = SquareMatrix<f64>;
pub type Adjacency = SquareMatrix<bool>;

impl Adjacency {
    /// Unordered node pairs `(i, j)` with `i < j` joined by an edge.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.get(i, j)).count()
    }
}

/// Euclidean (not squared) distance between every pair of rows.
pub fn pairwise_distances(centers: &Matrix) -> DistanceMatrix {
    let n = centers.rows();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(centers.row(i), centers.row(j)).sqrt();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    SquareMatrix { n, data }
}

/// Min-max normalization over every entry, diagonal included. When all
/// distances are equal the result is all zeros (fully connected).
pub fn normalize_distances(raw: &DistanceMatrix) -> DistanceMatrix {
    let (lo, hi) = raw
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return SquareMatrix::from_fn(raw.n, |_, _| 0.0);
    }
    SquareMatrix::from_fn(raw.n, |i, j| ((raw.get(i, j) - lo) / span).clamp(0.0, 1.0))
}

/// Thresholds normalized distances at `tau`. The diagonal is left empty unless
/// `self_edges` is set; the GCN adds self-loops on its own.
pub fn build_adjacency(norm: &DistanceMatrix, tau: f64, self_edges: bool) -> Result<Adjacency> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter(format!("tau {tau} outside [0, 1]")));
    }
    Ok(SquareMatrix::from_fn(norm.n, |i, j| {
        (i != j || self_edges) && norm.get(i, j) <= tau
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    pub node_features: Matrix,
    pub raw_dist: DistanceMatrix,
    pub norm_dist: DistanceMatrix,
    pub adjacency: Adjacency,
    pub tau: f64,
}

impl RelationGraph {
    pub fn build(node_features: Matrix, tau: f64, self_edges: bool) -> Result<Self> {
        let raw_dist = pairwise_distances(&node_features);
        let norm_dist = normalize_distances(&raw_dist);
        let adjacency = build_adjacency(&norm_dist, tau, self_edges)?;
        Ok(Self {
            node_features,
            raw_dist,
            norm_dist,
            adjacency,
            tau,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    /// D̂^{-1/2} Â D̂^{-1/2} with Â = A + I.
    pub fn propagation_operator(&self) -> Matrix {
        let n = self.node_count();
        let a_hat = |i: usize, j: usize| -> f64 {
            let edge = if self.adjacency.get(i, j) { 1.0 } else { 0.0 };
            edge + if i == j { 1.0 } else { 0.0 }
        };
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|i| 1.0 / (0..n).map(|j| a_hat(i, j)).sum::<f64>().sqrt())
            .collect();
        let data = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                inv_sqrt_deg[i] * a_hat(i, j) * inv_sqrt_deg[j]
            })
            .collect();
        Matrix::from_parts(n, n, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" | "none" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Weights of a multi-layer GCN. Layer `l` maps width `rows(W_l)` to
/// `cols(W_l)`; the activation runs after every layer, the last included.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    layers: Vec<Matrix>,
    activation: Activation,
}

impl GcnParams {
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("a GCN needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Dimension(format!(
                    "GCN layer {l} outputs width {} but layer {} expects {}",
                    pair[0].cols(),
                    l + 1,
                    pair[1].rows()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }
}

/// H⁽ˡ⁺¹⁾ = σ(D̂^{-1/2} Â D̂^{-1/2} H⁽ˡ⁾ W⁽ˡ⁾), starting from the node features.
pub fn gcn_forward(graph: &RelationGraph, params: &GcnParams) -> Result<Matrix> {
    if graph.node_features.cols() != params.input_width() {
        return Err(Error::Dimension(format!(
            "node width {} does not match GCN input width {}",
            graph.node_features.cols(),
            params.input_width()
        )));
    }
    let operator = graph.propagation_operator();
    let mut h = graph.node_features.clone();
    for w in &params.layers {
        let hw = h.matmul(w)?;
        h = operator.matmul(&hw)?.map(|x| params.activation.apply(x));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn distances_on_a_line() {
        let d = pairwise_distances(&line(&[0.0, 3.0, 4.0]));
        assert_eq!(d.get(0, 1), 3.0);
        assert_eq!(d.get(0, 2), 4.0);
        assert_eq!(d.get(1, 2), 1.0);
        assert_eq!(d.get(2, 1), 1.0);
        assert_eq!(d.get(1, 1), 0.0);

        let n = normalize_distances(&d);
        assert_eq!(n.get(0, 1), 0.75);
        assert_eq!(n.get(0, 2), 1.0);
        assert_eq!(n.get(1, 2), 0.25);

        let a = build_adjacency(&n, 0.5, false).unwrap();
        assert_eq!(a.edges(), vec![(1, 2)]);
    }

    #[test]
    fn identical_centers_are_fully_connected() {
        let pts = Matrix::from_rows(&[[1.0, 2.0]; 3]).unwrap();
        let d = pairwise_distances(&pts);
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
        let n = normalize_distances(&d);
        assert!(n.as_slice().iter().all(|&v| v == 0.0));
        let a = build_adjacency(&n, 0.0, false).unwrap();
        assert_eq!(a.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        // single node
        let n1 = normalize_distances(&pairwise_distances(&line(&[5.0])));
        assert_eq!(n1.as_slice(), &[0.0]);
    }

    #[test]
    fn tau_bounds() {
        let n = normalize_distances(&pairwise_distances(&line(&[0.0, 1.0, 3.0])));
        assert!(build_adjacency(&n, -0.01, false).is_err());
        assert!(build_adjacency(&n, 1.01, false).is_err());
        assert_eq!(build_adjacency(&n, 1.0, false).unwrap().edges().len(), 3);
        // unique minimum pair only
        assert_eq!(build_adjacency(&n, 0.0, false).unwrap().edges(), vec![]);
        let tight = normalize_distances(&pairwise_distances(&line(&[0.0, 0.0, 3.0])));
        assert_eq!(
            build_adjacency(&tight, 0.0, false).unwrap().edges(),
            vec![(0, 1)]
        );
    }

    #[test]
    fn self_edges_flag() {
        let n = normalize_distances(&pairwise_distances(&line(&[0.0, 1.0])));
        let a = build_adjacency(&n, 0.5, true).unwrap();
        assert!(a.get(0, 0) && a.get(1, 1) && !a.get(0, 1));
        let b = build_adjacency(&n, 0.5, false).unwrap();
        assert!(!b.get(0, 0));
    }

    #[test]
    fn single_node_identity_gcn() {
        let h = Matrix::from_rows(&[[0.5, 2.0, 0.0]]).unwrap();
        let g = RelationGraph::build(h.clone(), 0.1, false).unwrap();
        let p = GcnParams::new(vec![Matrix::identity(3)], Activation::Relu).unwrap();
        assert_eq!(gcn_forward(&g, &p).unwrap(), h);
    }

    #[test]
    fn disconnected_identical_nodes_stay_identical() {
        // two identical nodes far from a third: with tau 0 the twins connect
        // to each other only
        let feats = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [9.0, -3.0]]).unwrap();
        let g = RelationGraph::build(feats, 0.0, false).unwrap();
        let w = Matrix::from_rows(&[[0.3, -0.2], [0.7, 0.1]]).unwrap();
        let p = GcnParams::new(vec![w.clone(), w], Activation::Tanh).unwrap();
        let out = gcn_forward(&g, &p).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn zero_weights_give_activation_of_zero() {
        let feats = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        let g = RelationGraph::build(feats, 1.0, false).unwrap();
        let p = GcnParams::new(vec![Matrix::zeros(2, 4)], Activation::Sigmoid).unwrap();
        let out = gcn_forward(&g, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn degree_and_operator() {
        let g = RelationGraph::build(line(&[0.0, 1.0, 10.0]), 0.2, false).unwrap();
        assert_eq!(g.adjacency.degree(0), 1);
        assert_eq!(g.adjacency.degree(2), 0);
        let op = g.propagation_operator();
        assert!((op.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(op.get(2, 2), 1.0);

        let isolated = RelationGraph::build(line(&[0.0, 5.0, 10.0]), 0.0, false).unwrap();
        assert_eq!(isolated.propagation_operator(), Matrix::identity(3));
    }

    #[test]
    fn layer_chain_checked() {
        let bad = GcnParams::new(
            vec![Matrix::zeros(2, 3), Matrix::zeros(2, 2)],
            Activation::Relu,
        );
        assert!(bad.is_err());
        let p = GcnParams::new(vec![Matrix::zeros(3, 2)], Activation::Relu).unwrap();
        let g = RelationGraph::build(line(&[0.0, 1.0]), 0.5, false).unwrap();
        assert!(gcn_forward(&g, &p).is_err());
    }
}
