//! Dynamic graph data model: per-timestamp snapshots, seeded Erdős–Rényi
//! generation, and the self-loop-renormalized adjacency used by graph
//! convolutions.
//!
//! Graphs are undirected and stored as sorted edge lists; the normalized
//! adjacency is materialized sparsely (CSR) since panels are sparse.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge probability must lie in [0, 1], got {0}")]
    EdgeProbOutOfRange(f64),
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("value matrix has {got} rows, graph has {want} nodes")]
    RowCountMismatch { got: usize, want: usize },
    #[error("snapshots disagree on node count: {0} vs {1}")]
    NodeCountMismatch(usize, usize),
    #[error("a dynamic graph needs at least one snapshot")]
    NoSnapshots,
}

/// Undirected graph at a single timestamp. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    /// Builds a snapshot from an edge list. Edges are normalized to
    /// `(min, max)` order and sorted; self-loops, out-of-range indices,
    /// and duplicates are rejected.
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(GraphError::SelfLoop(e.0));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(GraphError::EdgeOutOfRange(e.0, e.1, n));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Self::from_sorted_edges(n, edges))
    }

    /// Builds an empty graph on `n` nodes.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::new(n, Vec::new())
    }

    fn from_sorted_edges(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        Self { n, edges, neighbors }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted list of `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Dense 0/1 adjacency, for small-graph oracles.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }
}

/// Ordered sequence of snapshots sharing a node count.
#[derive(Debug, Clone)]
pub struct DynamicGraph {
    snapshots: Vec<GraphSnapshot>,
}

impl DynamicGraph {
    pub fn new(snapshots: Vec<GraphSnapshot>) -> Result<Self, GraphError> {
        let n = snapshots.first().ok_or(GraphError::NoSnapshots)?.n();
        if let Some(s) = snapshots.iter().find(|s| s.n() != n) {
            return Err(GraphError::NodeCountMismatch(n, s.n()));
        }
        Ok(Self { snapshots })
    }

    pub fn n(&self) -> usize {
        self.snapshots[0].n()
    }

    pub fn num_timestamps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshot(&self, p: usize) -> &GraphSnapshot {
        &self.snapshots[p]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GraphSnapshot> {
        self.snapshots.iter()
    }
}

/// Symmetric renormalized adjacency in CSR form: `D̃^{-1/2}(A+I)D̃^{-1/2}`
/// where `D̃` is the degree matrix of `A+I`. Every diagonal entry is
/// positive and all entries lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    /// The identity matrix, i.e. the normalization of an empty graph.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    /// Sparse-dense product `Â · values` where `values` is `n × d`.
    pub fn matmul(&self, values: ArrayView2<f64>) -> Result<Array2<f64>, GraphError> {
        if values.nrows() != self.n {
            return Err(GraphError::RowCountMismatch { got: values.nrows(), want: self.n });
        }
        let d = values.ncols();
        let mut out = Array2::zeros((self.n, d));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let w = self.values[k];
                let row_j = values.row(j);
                let mut out_i = out.row_mut(i);
                out_i.scaled_add(w, &row_j);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[(i, self.col_idx[k])] = self.values[k];
            }
        }
        a
    }
}

/// Erdős–Rényi G(n, p): each of the n(n−1)/2 unordered pairs is an edge
/// independently with probability `edge_prob`. Deterministic given the rng.
pub fn generate_er_graph<R: Rng + ?Sized>(
    n: usize,
    edge_prob: f64,
    rng: &mut R,
) -> Result<GraphSnapshot, GraphError> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(GraphError::EdgeProbOutOfRange(edge_prob));
    }
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < edge_prob {
                edges.push((i, j));
            }
        }
    }
    Ok(GraphSnapshot::from_sorted_edges(n, edges))
}

/// Renormalization `D̃^{-1/2}(A+I)D̃^{-1/2}` of a snapshot.
pub fn normalize_adjacency(g: &GraphSnapshot) -> NormalizedAdjacency {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let mut diag_written = false;
        for &j in g.neighbors(i) {
            if !diag_written && j > i {
                col_idx.push(i);
                values.push(inv_sqrt[i] * inv_sqrt[i]);
                diag_written = true;
            }
            col_idx.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        if !diag_written {
            col_idx.push(i);
            values.push(inv_sqrt[i] * inv_sqrt[i]);
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency { n, row_ptr, col_idx, values }
}

/// Row `i` of the result is the arithmetic mean of `values` over the
/// neighbors of `i`; nodes without neighbors get a zero row.
pub fn neighbor_mean(
    g: &GraphSnapshot,
    values: ArrayView2<f64>,
) -> Result<Array2<f64>, GraphError> {
    if values.nrows() != g.n() {
        return Err(GraphError::RowCountMismatch { got: values.nrows(), want: g.n() });
    }
    let mut out = Array2::zeros((g.n(), values.ncols()));
    for i in 0..g.n() {
        let nbrs = g.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        let mut row = out.row_mut(i);
        for &j in nbrs {
            row.scaled_add(inv, &values.row(j));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_normalize(g: &GraphSnapshot) -> Array2<f64> {
        let n = g.n();
        let mut a = g.to_dense();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = a[(i, j)] / (deg[i] * deg[j]).sqrt();
            }
        }
        out
    }

    #[test]
    fn er_complete_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = generate_er_graph(4, 1.0, &mut rng).unwrap();
        assert_eq!(g.num_edges(), 6);
        let g = generate_er_graph(4, 0.0, &mut rng).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn er_rejects_bad_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_er_graph(4, -0.1, &mut rng).is_err());
        assert!(generate_er_graph(4, 1.5, &mut rng).is_err());
        assert!(generate_er_graph(4, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn er_mean_edge_count_matches_binomial() {
        // 100 seeds of G(200, 0.05): mean count within 3 sd of the
        // binomial mean, where sd is for the average of 100 draws.
        let pairs = 200.0 * 199.0 / 2.0;
        let p = 0.05;
        let mut total = 0usize;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            total += generate_er_graph(200, p, &mut rng).unwrap().num_edges();
        }
        let mean = total as f64 / 100.0;
        let expected = pairs * p;
        let sd_of_mean = (pairs * p * (1.0 - p) / 100.0).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * sd_of_mean,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn er_reproducible_per_seed() {
        let g1 = generate_er_graph(50, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let g2 = generate_er_graph(50, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn snapshot_rejects_invalid_edges() {
        assert!(matches!(GraphSnapshot::new(3, vec![(0, 0)]), Err(GraphError::SelfLoop(0))));
        assert!(matches!(
            GraphSnapshot::new(3, vec![(0, 3)]),
            Err(GraphError::EdgeOutOfRange(0, 3, 3))
        ));
        assert!(matches!(
            GraphSnapshot::new(3, vec![(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
        assert!(matches!(GraphSnapshot::new(0, vec![]), Err(GraphError::EmptyGraph)));
    }

    #[test]
    fn normalize_empty_graph_is_identity() {
        let g = GraphSnapshot::empty(2).unwrap();
        let a = normalize_adjacency(&g);
        assert_eq!(a.to_dense(), Array2::eye(2));
    }

    #[test]
    fn normalize_single_edge_pair() {
        let g = GraphSnapshot::new(2, vec![(0, 1)]).unwrap();
        let a = normalize_adjacency(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(a.entry(i, j), 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn normalize_path_graph() {
        // 0 - 1 - 2, degrees+1 = (2, 3, 2)
        let g = GraphSnapshot::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let a = normalize_adjacency(&g);
        assert_abs_diff_eq!(a.entry(0, 1), 1.0 / 6.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.entry(1, 1), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_row_sums_bounded_by_sqrt_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = generate_er_graph(40, 0.15, &mut rng).unwrap();
        let a = normalize_adjacency(&g);
        for i in 0..g.n() {
            assert!(a.row_sum(i) <= ((g.degree(i) + 1) as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn neighbor_mean_hand_cases() {
        // node 0 isolated; node 1 adjacent to 2 and 3
        let g = GraphSnapshot::new(4, vec![(1, 2), (1, 3)]).unwrap();
        let vals = array![[9.0, 9.0], [0.0, 0.0], [1.0, 0.0], [3.0, 2.0]];
        let m = neighbor_mean(&g, vals.view()).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(m.row(1).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn neighbor_mean_constant_on_complete_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = generate_er_graph(5, 1.0, &mut rng).unwrap();
        let vals = Array2::from_elem((5, 3), 7.5);
        let m = neighbor_mean(&g, vals.view()).unwrap();
        for v in m.iter() {
            assert_abs_diff_eq!(*v, 7.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn neighbor_mean_rejects_row_mismatch() {
        let g = GraphSnapshot::empty(3).unwrap();
        let vals = Array2::<f64>::zeros((2, 2));
        assert!(neighbor_mean(&g, vals.view()).is_err());
    }

    #[test]
    fn dynamic_graph_validates_node_count() {
        let a = GraphSnapshot::empty(3).unwrap();
        let b = GraphSnapshot::empty(4).unwrap();
        assert!(DynamicGraph::new(vec![a.clone(), b]).is_err());
        assert!(DynamicGraph::new(vec![]).is_err());
        assert!(DynamicGraph::new(vec![a]).is_ok());
    }

    proptest! {
        #[test]
        fn normalization_matches_dense_oracle(n in 1usize..=10, seed in 0u64..500, p in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = generate_er_graph(n, p, &mut rng).unwrap();
            let sparse = normalize_adjacency(&g).to_dense();
            let dense = dense_normalize(&g);
            for (a, b) in sparse.iter().zip(dense.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn normalization_is_symmetric(n in 1usize..=12, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = generate_er_graph(n, 0.4, &mut rng).unwrap();
            let a = normalize_adjacency(&g);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((a.entry(i, j) - a.entry(j, i)).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn neighbor_mean_is_linear(seed in 0u64..200, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = generate_er_graph(8, 0.3, &mut rng).unwrap();
            let v = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>() - 0.5);
            let w = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>() - 0.5);
            let combined = neighbor_mean(&g, (a * &v + b * &w).view()).unwrap();
            let separate = a * neighbor_mean(&g, v.view()).unwrap()
                + b * neighbor_mean(&g, w.view()).unwrap();
            for (x, y) in combined.iter().zip(separate.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
