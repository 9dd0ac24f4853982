//! Undirected graphs in compressed sparse row form, the propagation operators
//! derived from them, and labeled node splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SparseMatrix};

/// Undirected simple graph.
///
/// Rows list neighbors in ascending order; every edge is stored in both
/// directions, there are no self-loops and no duplicate neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Graph {
    /// Validates raw CSR arrays against the graph invariants.
    pub fn new(num_nodes: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        if row_ptr.len() != num_nodes + 1 || row_ptr[0] != 0 {
            return Err(Error::Structural(format!(
                "row_ptr has length {} for {num_nodes} nodes",
                row_ptr.len()
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) || row_ptr[num_nodes] != col_idx.len() {
            return Err(Error::Structural("row_ptr is not a valid offset array".into()));
        }
        let g = Graph {
            num_nodes,
            row_ptr,
            col_idx,
        };
        for v in 0..num_nodes {
            let nb = g.neighbors(v);
            if nb.iter().any(|&u| u >= num_nodes) {
                return Err(Error::Structural(format!("node {v} has an out-of-range neighbor")));
            }
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structural(format!(
                    "neighbors of node {v} are not strictly ascending"
                )));
            }
            if nb.binary_search(&v).is_ok() {
                return Err(Error::Structural(format!("node {v} has a self-loop")));
            }
            for &u in nb {
                if g.neighbors(u).binary_search(&v).is_err() {
                    return Err(Error::Structural(format!("edge ({v},{u}) has no reverse")));
                }
            }
        }
        Ok(g)
    }

    /// Builds a graph from arbitrary (possibly directed, duplicated or
    /// self-looping) node pairs by symmetrizing, deduplicating and dropping
    /// self-loops.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_nodes];
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Structural(format!(
                    "edge ({u},{v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for nb in adj {
            col_idx.extend(nb);
            row_ptr.push(col_idx.len());
        }
        Ok(Graph {
            num_nodes,
            row_ptr,
            col_idx,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.row_ptr[v + 1] - self.row_ptr[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Iterates each undirected edge once as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }
}

/// `D^-1/2 (A + I) D^-1/2`, the GCN aggregation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(SparseMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }
}

impl core::ops::Deref for NormalizedAdjacency {
    type Target = SparseMatrix;
    fn deref(&self) -> &SparseMatrix {
        &self.0
    }
}

/// Rescaled Laplacian `2L/λ_max − I` with `λ_max = 2` and the symmetric
/// normalization, which reduces to `−D^-1/2 A D^-1/2`. Isolated nodes have
/// empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplacian(SparseMatrix);

impl ScaledLaplacian {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }
}

impl core::ops::Deref for ScaledLaplacian {
    type Target = SparseMatrix;
    fn deref(&self) -> &SparseMatrix {
        &self.0
    }
}

/// Entry value `scale / sqrt(d_u d_v)` computed in double precision. The
/// product is commutative, so transposed entries are bit-equal.
fn sym_norm(scale: f64, du: usize, dv: usize) -> f32 {
    (scale / libm::sqrt((du as f64) * (dv as f64))) as f32
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let deg: Vec<usize> = (0..n).map(|v| g.degree(v) + 1).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(g.col_idx().len() + n);
    let mut values = Vec::with_capacity(g.col_idx().len() + n);
    row_ptr.push(0);
    for v in 0..n {
        let nb = g.neighbors(v);
        let split = nb.partition_point(|&u| u < v);
        let ordered = nb[..split]
            .iter()
            .chain(core::iter::once(&v))
            .chain(&nb[split..]);
        for &u in ordered {
            col_idx.push(u);
            values.push(sym_norm(1.0, deg[v], deg[u]));
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency(
        SparseMatrix::new(n, row_ptr, col_idx, values).expect("normalized adjacency is valid CSR"),
    )
}

pub fn scaled_laplacian(g: &Graph) -> ScaledLaplacian {
    let n = g.num_nodes();
    let mut values = Vec::with_capacity(g.col_idx().len());
    for v in 0..n {
        for &u in g.neighbors(v) {
            values.push(sym_norm(-1.0, g.degree(v), g.degree(u)));
        }
    }
    ScaledLaplacian(
        SparseMatrix::new(n, g.row_ptr().to_vec(), g.col_idx().to_vec(), values)
            .expect("graph CSR is valid"),
    )
}

/// The graph plus every propagation operator the models need.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub graph: Graph,
    pub adjacency: NormalizedAdjacency,
    pub laplacian: ScaledLaplacian,
}

impl GraphOperators {
    pub fn new(graph: Graph) -> Self {
        let adjacency = normalize_adjacency(&graph);
        let laplacian = scaled_laplacian(&graph);
        GraphOperators {
            graph,
            adjacency,
            laplacian,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

/// Per-node class labels and disjoint train/validation/test masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

impl LabeledSplit {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        mask_indices(&self.train_mask)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        mask_indices(&self.val_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }

    pub fn label_rate(&self) -> f64 {
        self.train_indices().len() as f64 / self.num_nodes() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if [&self.train_mask, &self.val_mask, &self.test_mask]
            .iter()
            .any(|m| m.len() != n)
        {
            return Err(Error::Structural("split masks differ in length from labels".into()));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Structural(format!(
                "label {bad} is not below num_classes {}",
                self.num_classes
            )));
        }
        for i in 0..n {
            let hits = self.train_mask[i] as u8 + self.val_mask[i] as u8 + self.test_mask[i] as u8;
            if hits > 1 {
                return Err(Error::Structural(format!("node {i} is in more than one split")));
            }
        }
        Ok(())
    }
}

/// How labeled nodes are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    /// First `per_class` nodes of each class (node order) train, the next
    /// `val` remaining nodes validate and the last `test` remaining nodes test.
    /// When fewer than `val + test` nodes remain, a third of them validate and
    /// the rest test.
    Planetoid {
        per_class: usize,
        val: usize,
        test: usize,
    },
}

impl SplitScheme {
    pub const PLANETOID: SplitScheme = SplitScheme::Planetoid {
        per_class: 20,
        val: 500,
        test: 1000,
    };
}

pub fn standard_split(
    labels: &[usize],
    num_classes: usize,
    scheme: SplitScheme,
) -> Result<LabeledSplit> {
    let SplitScheme::Planetoid {
        per_class,
        val,
        test,
    } = scheme;
    let n = labels.len();
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Structural(format!("label {bad} >= num_classes {num_classes}")));
    }
    let mut taken = vec![0usize; num_classes];
    let mut train_mask = vec![false; n];
    for (i, &l) in labels.iter().enumerate() {
        if taken[l] < per_class {
            taken[l] += 1;
            train_mask[i] = true;
        }
    }
    if let Some(c) = taken.iter().position(|&t| t < per_class) {
        return Err(Error::Structural(format!(
            "class {c} has {} nodes, the split needs {per_class}",
            taken[c]
        )));
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !train_mask[i]).collect();
    let (n_val, n_test) = if rest.len() >= val + test {
        (val, test)
    } else {
        let v = rest.len() / 3;
        (v, rest.len() - v)
    };
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    for &i in &rest[..n_val] {
        val_mask[i] = true;
    }
    for &i in &rest[rest.len() - n_test..] {
        test_mask[i] = true;
    }
    Ok(LabeledSplit {
        labels: labels.to_vec(),
        num_classes,
        train_mask,
        val_mask,
        test_mask,
    })
}

/// Scales each feature row to sum to one; all-zero rows are left alone.
pub fn row_normalize(features: &mut Matrix) {
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let sum: f64 = row.iter().map(|&x| x as f64).sum();
        if sum != 0.0 {
            for x in row.iter_mut() {
                *x = (*x as f64 / sum) as f32;
            }
        }
    }
}

/// A named graph dataset ready for training and inference.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub ops: GraphOperators,
    pub features: Matrix,
    pub split: LabeledSplit,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graph: Graph, features: Matrix, split: LabeledSplit) -> Result<Self> {
        if features.rows() != graph.num_nodes() || split.num_nodes() != graph.num_nodes() {
            return Err(Error::Structural(format!(
                "graph has {} nodes, features {} rows, labels {}",
                graph.num_nodes(),
                features.rows(),
                split.num_nodes()
            )));
        }
        if features.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Structural("node features contain non-finite values".into()));
        }
        split.validate()?;
        Ok(Dataset {
            name: name.into(),
            ops: GraphOperators::new(graph),
            features,
            split,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.ops.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.ops.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.split.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense `D^-1/2 (A+I) D^-1/2` computed straight from the definition.
    fn dense_normalized(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0f64; n]; n];
        for &(u, v) in edges {
            a[u][v] = 1.0;
            a[v][u] = 1.0;
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 1.0;
        }
        let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        (0..n)
            .map(|i| (0..n).map(|j| a[i][j] / (d[i].sqrt() * d[j].sqrt())).collect())
            .collect()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = Graph::from_edges(1, []).unwrap();
        assert_eq!(normalize_adjacency(&g).to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_normalizes_to_halves() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(normalize_adjacency(&g).to_dense().data(), &[0.5; 4]);
    }

    #[test]
    fn star_matches_dense_oracle() {
        let edges = [(0, 1), (0, 2), (0, 3)];
        let g = Graph::from_edges(4, edges).unwrap();
        let a = normalize_adjacency(&g).to_dense();
        let oracle = dense_normalized(4, &edges);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), oracle[i][j] as f32, "entry ({i},{j})");
            }
        }
        assert_eq!(a.get(0, 0), 0.25);
        assert_eq!(a.get(1, 1), 0.5);
        assert_eq!(a.get(0, 1), (1.0 / (2.0 * 2f64.sqrt())) as f32);
    }

    #[test]
    fn two_directed_cites_give_one_edge() {
        let g = Graph::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.row_ptr(), &[0, 1, 2]);
        assert_eq!(g.col_idx(), &[1, 0]);
        assert!(Graph::new(2, g.row_ptr().to_vec(), g.col_idx().to_vec()).is_ok());
    }

    #[test]
    fn invariant_violations_rejected() {
        assert!(Graph::new(2, vec![0, 1, 1], vec![1]).is_err()); // asymmetric
        assert!(Graph::new(1, vec![0, 1], vec![0]).is_err()); // self-loop
        assert!(Graph::new(2, vec![0, 2, 4], vec![1, 1, 0, 0]).is_err()); // duplicates
        assert!(Graph::new(2, vec![0, 1], vec![1]).is_err()); // bad length
    }

    #[test]
    fn laplacian_of_isolated_node_is_empty() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let l = scaled_laplacian(&g);
        assert_eq!(l.row(2).0.len(), 0);
        assert_eq!(l.get(0, 1), -1.0);
    }

    #[test]
    fn planetoid_split_three_classes() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let s = standard_split(&labels, 3, SplitScheme::PLANETOID).unwrap();
        s.validate().unwrap();
        assert_eq!(s.train_indices().len(), 60);
        assert_eq!(s.val_indices().len(), 80);
        assert_eq!(s.test_indices().len(), 160);
    }

    #[test]
    fn planetoid_split_full_size() {
        let labels: Vec<usize> = (0..2708).map(|i| (i * 7 / 2708) % 7).collect();
        let s = standard_split(&labels, 7, SplitScheme::PLANETOID).unwrap();
        assert_eq!(s.train_indices().len(), 140);
        assert_eq!(s.val_indices().len(), 500);
        assert_eq!(s.test_indices().len(), 1000);
        assert_eq!(*s.test_indices().last().unwrap(), 2707);
        assert!((s.label_rate() - 0.0517).abs() < 1e-4);
    }

    #[test]
    fn split_rejects_small_class() {
        let labels = vec![0; 30];
        assert!(matches!(
            standard_split(&[labels, vec![1; 5]].concat(), 2, SplitScheme::PLANETOID),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn row_normalize_sums_to_one() {
        let mut m = Matrix::from_rows(&[&[1.0, 1.0, 2.0], &[0.0, 0.0, 0.0]]).unwrap();
        row_normalize(&mut m);
        assert_eq!(m.row(0), &[0.25, 0.25, 0.5]);
        assert_eq!(m.row(1), &[0.0; 3]);
    }
}
