//! Single-layer forward operators in binary32.
//!
//! Nonlinearities propagate NaN the way framework kernels do: a NaN input
//! never silently becomes a finite output.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency, ScaledLaplacian};
use crate::tensor::Matrix;

pub const LEAKY_RELU_SLOPE: f32 = 0.2;

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        libm::expm1f(x)
    }
}

#[inline]
pub fn leaky_relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        LEAKY_RELU_SLOPE * x
    }
}

/// Maximum that returns NaN as soon as any element is NaN.
pub(crate) fn nan_max(xs: impl IntoIterator<Item = f32>) -> f32 {
    let mut m = f32::NEG_INFINITY;
    for x in xs {
        if x.is_nan() {
            return x;
        }
        if x > m {
            m = x;
        }
    }
    m
}

/// Row-wise `x − max − ln Σ exp(x − max)`.
pub fn log_softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = nan_max(row.iter().copied());
        let mut sum = 0.0f32;
        for &x in row.iter() {
            sum += libm::expf(x - max);
        }
        let log_sum = libm::logf(sum);
        for x in row.iter_mut() {
            *x = (*x - max) - log_sum;
        }
    }
}

fn check_rows(context: &'static str, expected: usize, m: &Matrix) -> Result<()> {
    if m.rows() != expected {
        return Err(Error::shape(context, format!("{expected} rows"), m.rows()));
    }
    Ok(())
}

/// `act(Â · (h · W))` with `act` = ReLU or identity.
pub fn gcn_layer(
    h: &Matrix,
    adjacency: &NormalizedAdjacency,
    weight: &Matrix,
    apply_relu: bool,
) -> Result<Matrix> {
    check_rows("gcn_layer", adjacency.dim(), h)?;
    let mut out = adjacency.spmm(&h.matmul(weight)?)?;
    if apply_relu {
        out.map_inplace(relu);
    }
    Ok(out)
}

/// How GAT heads are merged into the layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatCombine {
    Concat,
    Single,
}

/// Graph attention over `N(u) ∪ {u}`.
///
/// `weight` is `in × heads·width` (head-major column blocks) and `att` is
/// `heads × 2·width`; the first half of each attention row scores the target
/// node, the second half the neighbor.
pub fn gat_layer(
    h: &Matrix,
    graph: &Graph,
    weight: &Matrix,
    att: &Matrix,
    heads: usize,
    combine: GatCombine,
    apply_elu: bool,
) -> Result<Matrix> {
    check_rows("gat_layer", graph.num_nodes(), h)?;
    if heads == 0 || weight.cols() % heads != 0 {
        return Err(Error::shape("gat_layer weight", format!("multiple of {heads} columns"), weight.cols()));
    }
    let width = weight.cols() / heads;
    if att.shape() != (heads, 2 * width) {
        return Err(Error::shape(
            "gat_layer attention",
            format!("{heads}x{}", 2 * width),
            format!("{}x{}", att.rows(), att.cols()),
        ));
    }
    if combine == GatCombine::Single && heads != 1 {
        return Err(Error::InvalidParameter(format!(
            "single-head combine with {heads} heads"
        )));
    }
    let n = graph.num_nodes();
    let z = h.matmul(weight)?;
    let mut out = Matrix::zeros(n, heads * width);
    let mut logits: Vec<f32> = Vec::new();
    let mut hood: Vec<usize> = Vec::new();
    for head in 0..heads {
        let cols = head * width..(head + 1) * width;
        let a_self = &att.row(head)[..width];
        let a_nb = &att.row(head)[width..];
        let score = |v: usize, a: &[f32]| -> f32 {
            let mut s = 0.0f32;
            for (&zv, &av) in z.row(v)[cols.clone()].iter().zip(a) {
                s += av * zv;
            }
            s
        };
        let s_self: Vec<f32> = (0..n).map(|v| score(v, a_self)).collect();
        let s_nb: Vec<f32> = (0..n).map(|v| score(v, a_nb)).collect();
        for u in 0..n {
            neighborhood_with_self(graph, u, &mut hood);
            logits.clear();
            logits.extend(hood.iter().map(|&v| leaky_relu(s_self[u] + s_nb[v])));
            let max = nan_max(logits.iter().copied());
            let mut denom = 0.0f32;
            for e in logits.iter_mut() {
                *e = libm::expf(*e - max);
                denom += *e;
            }
            let acc = &mut out.row_mut(u)[cols.clone()];
            for (&v, &w) in hood.iter().zip(&logits) {
                let alpha = w / denom;
                for (o, &zv) in acc.iter_mut().zip(&z.row(v)[cols.clone()]) {
                    *o += alpha * zv;
                }
            }
        }
    }
    if apply_elu {
        out.map_inplace(elu);
    }
    Ok(out)
}

/// Neighbors of `u` plus `u` itself, ascending.
pub(crate) fn neighborhood_with_self(graph: &Graph, u: usize, out: &mut Vec<usize>) {
    out.clear();
    let nb = graph.neighbors(u);
    let split = nb.partition_point(|&v| v < u);
    out.extend_from_slice(&nb[..split]);
    out.push(u);
    out.extend_from_slice(&nb[split..]);
}

/// `act(Σ_k T_k(L̃) · h · W_k)` with the Chebyshev recurrence
/// `T_0 = I`, `T_1 = L̃`, `T_k = 2 L̃ T_{k−1} − T_{k−2}`.
pub fn cheb_layer(
    h: &Matrix,
    laplacian: &ScaledLaplacian,
    weights: &[Matrix],
    apply_relu: bool,
) -> Result<Matrix> {
    check_rows("cheb_layer", laplacian.dim(), h)?;
    let Some(first) = weights.first() else {
        return Err(Error::InvalidParameter("Chebyshev layer needs at least one weight".into()));
    };
    if weights.iter().any(|w| w.shape() != first.shape()) {
        return Err(Error::shape("cheb_layer weights", "equal shapes", "mixed shapes"));
    }
    let mut out = h.matmul(first)?;
    let mut prev2: Option<Matrix> = None;
    let mut prev = h.clone();
    for w in &weights[1..] {
        let mut next = laplacian.spmm(&prev)?;
        if let Some(p2) = &prev2 {
            for (x, &y) in next.data_mut().iter_mut().zip(p2.data()) {
                *x = 2.0 * *x - y;
            }
        }
        let term = next.matmul(w)?;
        for (o, &t) in out.data_mut().iter_mut().zip(term.data()) {
            *o += t;
        }
        prev2 = Some(core::mem::replace(&mut prev, next));
    }
    if apply_relu {
        out.map_inplace(relu);
    }
    Ok(out)
}

/// `Â^K · X` for SGC.
pub fn sgc_propagate(features: &Matrix, adjacency: &NormalizedAdjacency, hops: usize) -> Result<Matrix> {
    check_rows("sgc_propagate", adjacency.dim(), features)?;
    let mut s = features.clone();
    for _ in 0..hops {
        s = adjacency.spmm(&s)?;
    }
    Ok(s)
}

/// `LogSoftmax(Â^K · X · W)`.
pub fn sgc_forward(
    features: &Matrix,
    adjacency: &NormalizedAdjacency,
    weight: &Matrix,
    hops: usize,
) -> Result<Matrix> {
    if hops == 0 {
        return Err(Error::InvalidParameter("SGC needs at least one propagation step".into()));
    }
    let mut z = sgc_propagate(features, adjacency, hops)?.matmul(weight)?;
    log_softmax_rows(&mut z);
    Ok(z)
}
