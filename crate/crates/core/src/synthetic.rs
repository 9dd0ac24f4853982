//! Seeded planted-partition graphs for tests and demos.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{standard_split, Graph, LabeledSplit, SplitScheme};
use crate::tensor::Matrix;

/// Parameters of a synthetic planted-partition dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub nodes: usize,
    pub avg_degree: f64,
    pub num_features: usize,
    pub num_classes: usize,
}

/// Probability that an edge stays within its source's class.
const INTRA_CLASS_EDGE: f64 = 0.85;
/// Probability that an active feature comes from the node's class topic.
const TOPIC_FEATURE: f64 = 0.7;

/// Generates a graph whose edges mostly connect nodes of the same class and
/// whose binary features are biased toward a per-class topic, so both the
/// features and the topology carry label signal.
///
/// The split follows the Planetoid scheme with `min(20, nodes_per_class / 2)`
/// training nodes per class.
pub fn synthetic_graph(spec: SyntheticSpec) -> Result<(Graph, Matrix, LabeledSplit)> {
    let SyntheticSpec {
        seed,
        nodes: n,
        avg_degree,
        num_features: f,
        num_classes: c,
    } = spec;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 nodes, got {n}")));
    }
    if !(avg_degree >= 0.0 && avg_degree < n as f64) {
        return Err(Error::InvalidParameter(format!(
            "average degree {avg_degree} must be in [0, {n})"
        )));
    }
    if c == 0 || c > n || f == 0 {
        return Err(Error::InvalidParameter(format!(
            "{c} classes and {f} features for {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let target = libm::round(n as f64 * avg_degree / 2.0) as usize;
    let max_edges = n * (n - 1) / 2;
    let target = target.min(max_edges);
    let mut edges = BTreeSet::new();
    let mut attempts = 0usize;
    while edges.len() < target && attempts < 50 * target + 100 {
        attempts += 1;
        let u = rng.random_range(0..n);
        let v = if rng.random_bool(INTRA_CLASS_EDGE) {
            let same = &members[labels[u]];
            same[rng.random_range(0..same.len())]
        } else {
            rng.random_range(0..n)
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let graph = Graph::from_edges(n, edges)?;

    let active = (f / 8).max(1);
    let mut features = Matrix::zeros(n, f);
    for i in 0..n {
        let topic: Vec<usize> = (0..f).filter(|j| j % c == labels[i] % f).collect();
        for _ in 0..active {
            let j = if !topic.is_empty() && rng.random_bool(TOPIC_FEATURE) {
                topic[rng.random_range(0..topic.len())]
            } else {
                rng.random_range(0..f)
            };
            features.set(i, j, 1.0);
        }
    }

    let smallest = members.iter().map(Vec::len).min().unwrap_or(0);
    let per_class = (smallest / 2).clamp(1, 20);
    let split = standard_split(
        &labels,
        c,
        SplitScheme::Planetoid {
            per_class,
            val: 500,
            test: 1000,
        },
    )?;
    Ok((graph, features, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            nodes: 10,
            avg_degree: 2.0,
            num_features: 4,
            num_classes: 2,
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synthetic_graph(spec(1)).unwrap();
        let b = synthetic_graph(spec(1)).unwrap();
        assert_eq!(a.0, b.0);
        assert!(a.1.bit_eq(&b.1));
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn seed_changes_edges() {
        let a = synthetic_graph(spec(1)).unwrap().0;
        let b = synthetic_graph(spec(2)).unwrap().0;
        assert_ne!(a.col_idx(), b.col_idx());
    }

    #[test]
    fn degenerate_parameters_rejected() {
        let mut s = spec(1);
        s.nodes = 1;
        assert!(synthetic_graph(s).is_err());
        let mut s = spec(1);
        s.avg_degree = 10.0;
        assert!(synthetic_graph(s).is_err());
    }

    #[test]
    fn average_degree_is_close_to_request() {
        let (g, _, split) = synthetic_graph(SyntheticSpec {
            seed: 3,
            nodes: 400,
            avg_degree: 4.0,
            num_features: 32,
            num_classes: 4,
        })
        .unwrap();
        assert_eq!(g.num_edges(), 800);
        split.validate().unwrap();
    }
}
