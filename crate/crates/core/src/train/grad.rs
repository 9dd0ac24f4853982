//! Forward and reverse passes of every architecture in double precision.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dense::{dot, Csr, Dense};
use super::TrainData;
use crate::model::Arch;

/// Inverted dropout state for one training step.
pub(crate) struct Dropout<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    /// Mask entries are `0` or `1/(1−p)`.
    fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.p);
        (0..len)
            .map(|_| if self.rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect()
    }
}

fn maybe_mask(drop: &mut Option<Dropout<'_>>, len: usize) -> Option<Vec<f64>> {
    match drop {
        Some(d) if d.p > 0.0 => Some(d.mask(len)),
        _ => None,
    }
}

fn apply_mask(data: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (x, &k) in data.iter_mut().zip(m) {
            *x *= k;
        }
    }
}

/// Either the sparse node features or a dense hidden matrix.
enum Input<'a> {
    Sparse(&'a Csr),
    Dense(&'a Dense),
}

impl Input<'_> {
    fn matmul(&self, w: &Dense) -> Dense {
        match self {
            Input::Sparse(x) => x.spmm(w),
            Input::Dense(h) => h.matmul(w),
        }
    }

    fn t_matmul(&self, g: &Dense) -> Dense {
        match self {
            Input::Sparse(x) => x.t_spmm(g),
            Input::Dense(h) => h.t_matmul(g),
        }
    }
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax(z: &Dense) -> Dense {
    let mut out = z.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
        for x in row.iter_mut() {
            *x = *x - max - lse;
        }
    }
    out
}

/// Mean negative log-likelihood over `rows` and its gradient w.r.t. the logits.
fn nll(logp: &Dense, labels: &[usize], rows: &[usize], grad: bool) -> (f64, Option<Dense>) {
    let m = rows.len() as f64;
    let loss = -rows.iter().map(|&i| logp.row(i)[labels[i]]).sum::<f64>() / m;
    let dz = grad.then(|| {
        let mut dz = Dense::zeros(logp.rows, logp.cols);
        for &i in rows {
            for (j, (d, &lp)) in dz.row_mut(i).iter_mut().zip(logp.row(i)).enumerate() {
                *d = (libm::exp(lp) - if j == labels[i] { 1.0 } else { 0.0 }) / m;
            }
        }
        dz
    });
    (loss, dz)
}

pub(crate) struct Pass {
    pub loss: f64,
    pub logp: Dense,
    pub grads: Option<Vec<Dense>>,
}

/// Runs the model on `data`, scoring the NLL on `rows`. Gradients are of the
/// mean NLL only; weight decay is added by the caller.
pub(crate) fn run(
    arch: Arch,
    params: &[Dense],
    data: &TrainData,
    rows: &[usize],
    mut drop: Option<Dropout<'_>>,
    grad: bool,
) -> Pass {
    match arch {
        Arch::Gcn => gcn(params, data, rows, &mut drop, grad),
        Arch::Sgc => sgc(params, data, rows, grad),
        Arch::Cheb => cheb(params, data, rows, &mut drop, grad),
        Arch::Gat => gat(params, data, rows, &mut drop, grad),
    }
}

fn dropped_features(data: &TrainData, drop: &mut Option<Dropout<'_>>) -> Option<Csr> {
    let mask = maybe_mask(drop, data.features.nnz())?;
    let mut v = data.features.values.clone();
    apply_mask(&mut v, &Some(mask));
    Some(data.features.with_values(v))
}

fn relu_inplace(z: &Dense) -> Dense {
    let mut h = z.clone();
    h.data.iter_mut().for_each(|x| *x = x.max(0.0));
    h
}

fn gcn(params: &[Dense], data: &TrainData, rows: &[usize], drop: &mut Option<Dropout<'_>>, grad: bool) -> Pass {
    let (w1, w2) = (&params[0], &params[1]);
    let a = &data.adjacency;
    let xd = dropped_features(data, drop);
    let x = Input::Sparse(xd.as_ref().unwrap_or(&data.features));
    let z1 = a.spmm(&x.matmul(w1));
    let mut h = relu_inplace(&z1);
    let m2 = maybe_mask(drop, h.data.len());
    apply_mask(&mut h.data, &m2);
    let z2 = a.spmm(&h.matmul(w2));
    let logp = log_softmax(&z2);
    let (loss, dz2) = nll(&logp, &data.labels, rows, grad);
    let grads = dz2.map(|dz2| {
        let dp2 = a.t_spmm(&dz2);
        let dw2 = h.t_matmul(&dp2);
        let mut dh = dp2.matmul_t(w2);
        apply_mask(&mut dh.data, &m2);
        for (d, &z) in dh.data.iter_mut().zip(&z1.data) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let dp1 = a.t_spmm(&dh);
        let dw1 = x.t_matmul(&dp1);
        vec![dw1, dw2]
    });
    Pass { loss, logp, grads }
}

fn sgc(params: &[Dense], data: &TrainData, rows: &[usize], grad: bool) -> Pass {
    let s = data.propagated.as_ref().expect("SGC training data carries propagated features");
    let logp = log_softmax(&s.matmul(&params[0]));
    let (loss, dz) = nll(&logp, &data.labels, rows, grad);
    let grads = dz.map(|dz| vec![s.t_matmul(&dz)]);
    Pass { loss, logp, grads }
}

/// `T_k(L̃) · y`.
fn cheb_apply(l: &Csr, y: &Dense, k: usize) -> Dense {
    if k == 0 {
        return y.clone();
    }
    let mut prev2 = y.clone();
    let mut prev = l.spmm(y);
    for _ in 1..k {
        let mut next = l.spmm(&prev);
        for (a, &b) in next.data.iter_mut().zip(&prev2.data) {
            *a = 2.0 * *a - b;
        }
        prev2 = core::mem::replace(&mut prev, next);
    }
    prev
}

/// `Σ_k T_k(L̃) (x W_k)` and, given the output gradient, the weight and input gradients.
fn cheb_layer(l: &Csr, x: &Input<'_>, ws: &[Dense]) -> Dense {
    let mut z = x.matmul(&ws[0]);
    for (k, w) in ws.iter().enumerate().skip(1) {
        z.add_assign(&cheb_apply(l, &x.matmul(w), k));
    }
    z
}

fn cheb_layer_back(l: &Csr, x: &Input<'_>, ws: &[Dense], dz: &Dense, need_input: bool) -> (Vec<Dense>, Option<Dense>) {
    let mut dws = Vec::with_capacity(ws.len());
    let mut dx: Option<Dense> = None;
    for (k, w) in ws.iter().enumerate() {
        // T_k(L̃) is symmetric.
        let dq = cheb_apply(l, dz, k);
        dws.push(x.t_matmul(&dq));
        if need_input {
            let part = dq.matmul_t(w);
            match &mut dx {
                Some(d) => d.add_assign(&part),
                None => dx = Some(part),
            }
        }
    }
    (dws, dx)
}

fn cheb(params: &[Dense], data: &TrainData, rows: &[usize], drop: &mut Option<Dropout<'_>>, grad: bool) -> Pass {
    let k = params.len() / 2;
    let (ws1, ws2) = params.split_at(k);
    let l = &data.laplacian;
    let xd = dropped_features(data, drop);
    let x = Input::Sparse(xd.as_ref().unwrap_or(&data.features));
    let z1 = cheb_layer(l, &x, ws1);
    let mut h = relu_inplace(&z1);
    let m2 = maybe_mask(drop, h.data.len());
    apply_mask(&mut h.data, &m2);
    let z2 = cheb_layer(l, &Input::Dense(&h), ws2);
    let logp = log_softmax(&z2);
    let (loss, dz2) = nll(&logp, &data.labels, rows, grad);
    let grads = dz2.map(|dz2| {
        let (mut dws2, dh) = cheb_layer_back(l, &Input::Dense(&h), ws2, &dz2, true);
        let mut dh = dh.expect("input gradient requested");
        apply_mask(&mut dh.data, &m2);
        for (d, &z) in dh.data.iter_mut().zip(&z1.data) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let (mut dws, _) = cheb_layer_back(l, &x, ws1, &dh, false);
        dws.append(&mut dws2);
        dws
    });
    Pass { loss, logp, grads }
}

const SLOPE: f64 = 0.2;

/// Intermediate values of one attention layer kept for the reverse pass.
struct GatCache {
    p: Dense,
    /// Per head and edge (head-major): pre-activation score, softmax weight
    /// and the dropout factor applied to it.
    pre: Vec<f64>,
    alpha: Vec<f64>,
    att_mask: Option<Vec<f64>>,
    /// Output before ELU.
    z: Dense,
}

/// Attention over the rows of `hood`, which is the self-looped adjacency pattern.
fn gat_layer(hood: &Csr, x: &Input<'_>, w: &Dense, att: &Dense, heads: usize, drop: &mut Option<Dropout<'_>>) -> GatCache {
    let n = hood.rows;
    let width = w.cols / heads;
    let nnz = hood.nnz();
    let p = x.matmul(w);
    let mut pre = vec![0.0; heads * nnz];
    let mut alpha = vec![0.0; heads * nnz];
    let att_mask = maybe_mask(drop, heads * nnz);
    let mut z = Dense::zeros(n, heads * width);
    for k in 0..heads {
        let cols = k * width..(k + 1) * width;
        let (a_self, a_nb) = att.row(k).split_at(width);
        let s: Vec<f64> = (0..n).map(|v| dot(&p.row(v)[cols.clone()], a_self)).collect();
        let t: Vec<f64> = (0..n).map(|v| dot(&p.row(v)[cols.clone()], a_nb)).collect();
        for u in 0..n {
            let (nb, _) = hood.row(u);
            let base = k * nnz + hood.row_ptr[u];
            let mut max = f64::NEG_INFINITY;
            for (e, &v) in nb.iter().enumerate() {
                let x = s[u] + t[v];
                pre[base + e] = x;
                let lr = if x > 0.0 { x } else { SLOPE * x };
                alpha[base + e] = lr;
                max = max.max(lr);
            }
            let mut denom = 0.0;
            for a in &mut alpha[base..base + nb.len()] {
                *a = libm::exp(*a - max);
                denom += *a;
            }
            let zu = &mut z.data[u * heads * width..(u + 1) * heads * width][cols.clone()];
            for (e, &v) in nb.iter().enumerate() {
                alpha[base + e] /= denom;
                let coef = alpha[base + e] * att_mask.as_ref().map_or(1.0, |m| m[base + e]);
                for (o, &pv) in zu.iter_mut().zip(&p.row(v)[cols.clone()]) {
                    *o += coef * pv;
                }
            }
        }
    }
    GatCache {
        p,
        pre,
        alpha,
        att_mask,
        z,
    }
}

/// Returns `(dW, d_att, d_input)` given the gradient of the pre-ELU output.
fn gat_layer_back(
    hood: &Csr,
    x: &Input<'_>,
    w: &Dense,
    att: &Dense,
    heads: usize,
    c: &GatCache,
    dz: &Dense,
    need_input: bool,
) -> (Dense, Dense, Option<Dense>) {
    let n = hood.rows;
    let width = w.cols / heads;
    let nnz = hood.nnz();
    let mut dp = Dense::zeros(n, heads * width);
    let mut datt = Dense::zeros(heads, 2 * width);
    let mut dalpha = vec![0.0; nnz];
    for k in 0..heads {
        let cols = k * width..(k + 1) * width;
        let (a_self, a_nb) = att.row(k).split_at(width);
        let mut ds = vec![0.0; n];
        let mut dt = vec![0.0; n];
        for u in 0..n {
            let (nb, _) = hood.row(u);
            let base = k * nnz + hood.row_ptr[u];
            let row0 = hood.row_ptr[u];
            let dzu = &dz.row(u)[cols.clone()];
            let mut weighted = 0.0;
            for (e, &v) in nb.iter().enumerate() {
                let m = c.att_mask.as_ref().map_or(1.0, |m| m[base + e]);
                let coef = c.alpha[base + e] * m;
                for (d, &g) in dp.row_mut(v)[cols.clone()].iter_mut().zip(dzu) {
                    *d += coef * g;
                }
                let da = dot(dzu, &c.p.row(v)[cols.clone()]) * m;
                dalpha[row0 + e] = da;
                weighted += c.alpha[base + e] * da;
            }
            for (e, &v) in nb.iter().enumerate() {
                let de = c.alpha[base + e] * (dalpha[row0 + e] - weighted);
                let dpre = if c.pre[base + e] > 0.0 { de } else { SLOPE * de };
                ds[u] += dpre;
                dt[v] += dpre;
            }
        }
        for v in 0..n {
            let pv: Vec<f64> = c.p.row(v)[cols.clone()].to_vec();
            let (gs, gt) = datt.row_mut(k).split_at_mut(width);
            for j in 0..width {
                gs[j] += ds[v] * pv[j];
                gt[j] += dt[v] * pv[j];
            }
            let dpv = &mut dp.row_mut(v)[cols.clone()];
            for j in 0..width {
                dpv[j] += ds[v] * a_self[j] + dt[v] * a_nb[j];
            }
        }
    }
    let dw = x.t_matmul(&dp);
    let dx = need_input.then(|| dp.matmul_t(w));
    (dw, datt, dx)
}

fn gat(params: &[Dense], data: &TrainData, rows: &[usize], drop: &mut Option<Dropout<'_>>, grad: bool) -> Pass {
    let heads = data.heads;
    let (w1, a1, w2, a2) = (&params[0], &params[1], &params[2], &params[3]);
    let hood = &data.adjacency;
    let xd = dropped_features(data, drop);
    let x = Input::Sparse(xd.as_ref().unwrap_or(&data.features));
    let c1 = gat_layer(hood, &x, w1, a1, heads, drop);
    let mut h = c1.z.clone();
    h.data.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { libm::expm1(*v) });
    let m2 = maybe_mask(drop, h.data.len());
    apply_mask(&mut h.data, &m2);
    let hin = Input::Dense(&h);
    let c2 = gat_layer(hood, &hin, w2, a2, 1, drop);
    let logp = log_softmax(&c2.z);
    let (loss, dz2) = nll(&logp, &data.labels, rows, grad);
    let grads = dz2.map(|dz2| {
        let (dw2, da2, dh) = gat_layer_back(hood, &hin, w2, a2, 1, &c2, &dz2, true);
        let mut dz1 = dh.expect("input gradient requested");
        apply_mask(&mut dz1.data, &m2);
        for (d, &z) in dz1.data.iter_mut().zip(&c1.z.data) {
            if z <= 0.0 {
                *d *= libm::exp(z);
            }
        }
        let (dw1, da1, _) = gat_layer_back(hood, &x, w1, a1, heads, &c1, &dz1, false);
        vec![dw1, da1, dw2, da2]
    });
    Pass { loss, logp, grads }
}
