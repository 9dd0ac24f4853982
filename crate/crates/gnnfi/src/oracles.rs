//! Independent reference checks of the numerical kernels.
//!
//! Each oracle recomputes a result by a different route (dense matrices,
//! double precision, brute-force enumeration, a direct Bernoulli sampler)
//! and compares it with the library. `gnnfi selftest` runs them all.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gnnfi_core::bits::{flip_bits_in_word, ValueClass};
use gnnfi_core::graph::{normalize_adjacency, scaled_laplacian, Dataset, Graph, GraphOperators};
use gnnfi_core::inject::{census_errors, generate_error_map, ShapeCensus};
use gnnfi_core::mitigation::{mask_repair, topo_filter, MaskMode};
use gnnfi_core::model::layers::{cheb_layer, gat_layer, gcn_layer, sgc_forward, GatCombine};
use gnnfi_core::model::{
    evaluate_accuracy, model_forward, model_logits, Arch, FnInterceptor, Hyper, InterceptorRegistry, LayerSelector,
    ModelCheckpoint,
};
use gnnfi_core::synthetic::{synthetic_graph, SyntheticSpec};
use gnnfi_core::tensor::Matrix;
use gnnfi_core::train::{train_model, ShadowModel, TrainConfig, TrainData};

/// Upper 1% point of the chi-square distribution with 64 degrees of freedom.
pub const CHI2_64_P99: f64 = 93.216_859_660_238_43;

/// `f32::from_bits(0x0040_0000)`, the largest-mantissa-bit subnormal.
pub const SUBNORMAL_BIT22: f64 = 5.877_471_754_111_438e-39;

pub type OracleFn = fn() -> Result<String, String>;

pub struct Oracle {
    pub name: &'static str,
    pub run: OracleFn,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub result: Result<String, String>,
    pub elapsed: Duration,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }

    pub fn line(&self) -> String {
        let (tag, detail) = match &self.result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        format!("{tag} {} ({:.2}s): {detail}", self.name, self.elapsed.as_secs_f64())
    }
}

pub fn all_oracles() -> Vec<Oracle> {
    macro_rules! o {
        ($($f:ident),* $(,)?) => { vec![$(Oracle { name: stringify!($f), run: $f }),*] };
    }
    o![
        error_map_chi_square,
        flip_count_binomial,
        bit_flip_involution,
        subnormal_decode,
        census_enumeration,
        normalized_adjacency_dense,
        gcn_layer_dense,
        gat_layer_brute_force,
        cheb_layer_dense,
        sgc_dense,
        gradients_finite_difference,
        topo_filter_brute_force,
        mask_semantics,
        activation_flip_locality,
        trainer_planted_partition,
    ]
}

pub fn run_oracle(o: &Oracle) -> OracleOutcome {
    let start = Instant::now();
    let result = std::panic::catch_unwind(o.run).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(format!("panic: {msg}"))
    });
    OracleOutcome {
        name: o.name,
        result,
        elapsed: start.elapsed(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------------------
// Error maps and bits

/// `Σ (c_i − Np)² / (Np(1−p))` over per-bit flip counts.
pub fn per_bit_chi_square(counts: &[u64], samples: u64, p: f64) -> f64 {
    let mean = samples as f64 * p;
    let var = mean * (1.0 - p);
    counts.iter().map(|&c| (c as f64 - mean).powi(2) / var).sum()
}

/// Per-bit flip frequencies of 10,000 error maps over a 64-bit census are
/// consistent with independent Bernoulli(ber) bits, and so are those of a
/// direct Bernoulli sampler judged by the same statistic.
pub fn error_map_chi_square() -> Result<String, String> {
    const SAMPLES: u64 = 10_000;
    let census: ShapeCensus = vec![("w".into(), 2)];
    let mut report = Vec::new();
    for (i, ber) in [0.1, 0.5].into_iter().enumerate() {
        let mut from_maps = [0u64; 64];
        let mut flips = 0u64;
        for s in 0..SAMPLES {
            let map = generate_error_map(&census, ber, 1_000_000 * i as u64 + s).map_err(e)?;
            flips += map.len() as u64;
            for site in map.sites() {
                from_maps[site.element * 32 + site.bit as usize] += 1;
            }
        }
        let mut direct = [0u64; 64];
        let mut rng = ChaCha8Rng::seed_from_u64(0xB17 + i as u64);
        for _ in 0..SAMPLES {
            for c in direct.iter_mut() {
                if rng.random_bool(ber) {
                    *c += 1;
                }
            }
        }
        let x_map = per_bit_chi_square(&from_maps, SAMPLES, ber);
        let x_ref = per_bit_chi_square(&direct, SAMPLES, ber);
        ensure(x_map < CHI2_64_P99, || format!("ber {ber}: map chi2 {x_map:.2} >= {CHI2_64_P99:.4}"))?;
        ensure(x_ref < CHI2_64_P99, || format!("ber {ber}: reference chi2 {x_ref:.2} >= {CHI2_64_P99:.4}"))?;
        let n = (64 * SAMPLES) as f64;
        let sigma = (n * ber * (1.0 - ber)).sqrt();
        ensure((flips as f64 - n * ber).abs() <= 3.0 * sigma, || {
            format!("ber {ber}: {flips} total flips, expected {} ± {:.0}", n * ber, 3.0 * sigma)
        })?;
        report.push(format!("ber {ber}: chi2 {x_map:.1} (reference {x_ref:.1})"));
    }
    Ok(format!("{}; critical {CHI2_64_P99:.4}", report.join(", ")))
}

/// Flip counts fall within three binomial standard deviations.
pub fn flip_count_binomial() -> Result<String, String> {
    let mut out = Vec::new();
    for (label, elements, ber) in [("1e5 elements", 100_000usize, 1e-2), ("23,040 weights", 23_040, 1e-3)] {
        let bits = (elements * 32) as f64;
        let mean = bits * ber;
        let band = 3.0 * (bits * ber * (1.0 - ber)).sqrt();
        let census: ShapeCensus = vec![("w".into(), elements)];
        for seed in 0..5 {
            let k = generate_error_map(&census, ber, seed).map_err(e)?.len() as f64;
            ensure((k - mean).abs() <= band, || format!("{label} at {ber}: {k} flips, expected {mean} ± {band:.1}"))?;
        }
        out.push(format!("{label} at {ber:e}: {mean} ± {band:.1}"));
    }
    Ok(out.join(", "))
}

/// Flipping the same mask twice restores the word, for 10^6 random pairs.
pub fn bit_flip_involution() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1_0001);
    let mut bits = Vec::with_capacity(32);
    for i in 0..1_000_000u32 {
        let word: u32 = rng.random();
        let mask: u32 = rng.random();
        bits.clear();
        bits.extend((0..32u8).filter(|b| mask >> b & 1 == 1));
        let once = flip_bits_in_word(word, &bits);
        ensure(once == word ^ mask, || format!("pair {i}: {word:#010x} ^ {mask:#010x} gave {once:#010x}"))?;
        let twice = flip_bits_in_word(once, &bits);
        ensure(twice == word, || format!("pair {i}: {word:#010x} not restored ({twice:#010x})"))?;
        let f = f32::from_bits(word);
        let back = f32::from_bits(flip_bits_in_word(flip_bits_in_word(f.to_bits(), &bits), &bits));
        ensure(back.to_bits() == word, || format!("pair {i}: f32 round trip changed the bits"))?;
    }
    Ok("1000000 pairs".into())
}

/// Textbook binary32 decoding in double precision.
pub fn decode_binary32(word: u32) -> f64 {
    let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
    let exponent = ((word >> 23) & 0xff) as i32;
    let mantissa = (word & 0x7f_ffff) as f64;
    match exponent {
        0 => sign * mantissa * 2f64.powi(-149),
        255 if mantissa == 0.0 => sign * f64::INFINITY,
        255 => f64::NAN,
        _ => sign * (1.0 + mantissa / 8_388_608.0) * 2f64.powi(exponent - 127),
    }
}

pub fn subnormal_decode() -> Result<String, String> {
    let word = flip_bits_in_word(0, &[22]);
    ensure(word == 0x0040_0000, || format!("flip of bit 22 gave {word:#010x}"))?;
    let v = f32::from_bits(word);
    ensure(v.is_subnormal(), || "bit 22 of zero is not subnormal".into())?;
    ensure(decode_binary32(word) == SUBNORMAL_BIT22, || format!("reference decodes {}", decode_binary32(word)))?;
    ensure(f64::from(v) == SUBNORMAL_BIT22, || format!("f32 value {v:e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100_000 {
        let w: u32 = rng.random();
        let (a, b) = (decode_binary32(w), f64::from(f32::from_bits(w)));
        ensure(a == b || (a.is_nan() && b.is_nan()), || format!("{w:#010x}: reference {a:e}, hardware {b:e}"))?;
    }
    Ok(format!("0x00400000 = {SUBNORMAL_BIT22:e}; 100000 random words agree"))
}

fn class_of(v: f32) -> ValueClass {
    if v.is_nan() {
        ValueClass::NaN
    } else if v.is_infinite() {
        ValueClass::Infinite
    } else if v == 0.0 {
        ValueClass::Zero
    } else if v.is_subnormal() {
        ValueClass::Subnormal
    } else {
        ValueClass::Finite
    }
}

/// All 32 single-bit flips of fixed words, classified with the standard
/// library's float predicates, against the injection census.
pub fn census_enumeration() -> Result<String, String> {
    let words: [f32; 6] = [1.0, -2.5, 0.0, f32::INFINITY, f32::from_bits(0x0000_0101), 3.0e38];
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut nan = 0u64;
    let mut transitions = [[0u64; 5]; 5];
    for w in words {
        for b in 0..32u8 {
            let flipped = f32::from_bits(w.to_bits() ^ (1 << b));
            before.push(w);
            after.push(flipped);
            if flipped.is_nan() {
                nan += 1;
            }
            transitions[class_of(w).index()][class_of(flipped).index()] += 1;
        }
    }
    let c = census_errors(&before, &after).map_err(e)?;
    let total = (words.len() * 32) as u64;
    ensure(c.nan_producing == nan, || format!("NaN-producing {} vs {nan}", c.nan_producing))?;
    ensure(c.non_nan == total - nan, || format!("non-NaN {} vs {}", c.non_nan, total - nan))?;
    ensure(c.transitions == transitions, || format!("transitions {:?} vs {transitions:?}", c.transitions))?;
    // 1.0 has one Inf flip (bit 30); +Inf has 23 NaN flips.
    ensure(transitions[ValueClass::Finite.index()][ValueClass::Infinite.index()] >= 1, || "no Inf".into())?;
    Ok(format!("{total} flips: {nan} NaN-producing, {} non-NaN", total - nan))
}

// ---------------------------------------------------------------------------
// Layers against dense references

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges).expect("valid edges")
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Matrix::new(rows, cols, data).expect("shape")
}

fn dense_adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut a = vec![vec![false; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// `D^-1/2 (A + I) D^-1/2` from a dense adjacency.
fn dense_norm_adj(a: &[Vec<bool>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().filter(|&&x| x).count() as f64 + 1.0).collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || a[i][j] {
                m[i][j] = 1.0 / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    m
}

/// `−D^-1/2 A D^-1/2` from a dense adjacency.
fn dense_laplacian(a: &[Vec<bool>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().filter(|&&x| x).count() as f64).collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] {
                m[i][j] = -1.0 / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    m
}

fn to_f64(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).iter().map(|&x| f64::from(x)).collect()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

fn max_rel_err(got: &Matrix, want: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let g = f64::from(got.get(i, j));
            worst = worst.max((g - w).abs() / (1.0 + w.abs()));
        }
    }
    worst
}

pub fn normalized_adjacency_dense() -> Result<String, String> {
    let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).map_err(e)?;
    let adj = normalize_adjacency(&star);
    let s = 1.0 / (2.0 * 2f64.sqrt());
    ensure(adj.get(0, 0) == 0.25, || format!("center {}", adj.get(0, 0)))?;
    for leaf in 1..4 {
        ensure(adj.get(leaf, leaf) == 0.5, || format!("leaf {}", adj.get(leaf, leaf)))?;
        ensure(adj.get(0, leaf) == s as f32 && adj.get(leaf, 0) == s as f32, || "center-leaf".into())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for _ in 0..50 {
        let g = random_graph(&mut rng, 12, 0.3);
        let want = dense_norm_adj(&dense_adjacency(&g));
        let got = normalize_adjacency(&g).to_dense();
        let lap = scaled_laplacian(&g).to_dense();
        let want_lap = dense_laplacian(&dense_adjacency(&g));
        for i in 0..12 {
            for j in 0..12 {
                ensure(got.get(i, j) == want[i][j] as f32, || format!("Â[{i}][{j}]"))?;
                ensure(lap.get(i, j) == want_lap[i][j] as f32, || format!("L[{i}][{j}]"))?;
            }
        }
    }
    Ok("K_{1,3} and 50 random 12-node graphs".into())
}

/// Dense `Â · (h · W)` in binary32 summing in ascending index order equals
/// the sparse kernel bit for bit.
pub fn gcn_layer_dense() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let g = random_graph(&mut rng, 5, 0.5);
        let h = random_matrix(&mut rng, 5, 4);
        let w = random_matrix(&mut rng, 4, 3);
        let a = dense_norm_adj(&dense_adjacency(&g));
        let mut hw = [[0f32; 3]; 5];
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0f32;
                for k in 0..4 {
                    acc += h.get(i, k) * w.get(k, j);
                }
                hw[i][j] = acc;
            }
        }
        for relu in [false, true] {
            let got = gcn_layer(&h, &normalize_adjacency(&g), &w, relu).map_err(e)?;
            for i in 0..5 {
                for j in 0..3 {
                    let mut acc = 0f32;
                    for k in 0..5 {
                        acc += a[i][k] as f32 * hw[k][j];
                    }
                    if relu {
                        acc = acc.max(0.0);
                    }
                    ensure(got.get(i, j).to_bits() == acc.to_bits() || (acc == 0.0 && got.get(i, j) == 0.0), || {
                        format!("case {case} [{i}][{j}]: {} vs {acc}", got.get(i, j))
                    })?;
                }
            }
        }
    }
    Ok("50 random 5-node cases, bit-exact".into())
}

/// Materializes every attention logit `e_uv` in double precision and
/// normalizes explicitly over `N(u) ∪ {u}`.
pub fn gat_brute_force(h: &Matrix, g: &Graph, w: &Matrix, att: &Matrix, heads: usize, elu: bool) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let width = w.cols() / heads;
    let a = dense_adjacency(g);
    let z = mm(&to_f64(h), &to_f64(w));
    let att = to_f64(att);
    let mut out = vec![vec![0.0; heads * width]; n];
    for head in 0..heads {
        let zh = |v: usize| &z[v][head * width..(head + 1) * width];
        for u in 0..n {
            let mut logits = vec![f64::NEG_INFINITY; n];
            for v in 0..n {
                if v == u || a[u][v] {
                    let s: f64 = (0..width).map(|k| att[head][k] * zh(u)[k] + att[head][width + k] * zh(v)[k]).sum();
                    logits[v] = if s > 0.0 { s } else { 0.2 * s };
                }
            }
            let total: f64 = logits.iter().map(|&x| x.exp()).sum();
            for v in 0..n {
                let alpha = logits[v].exp() / total;
                for k in 0..width {
                    out[u][head * width + k] += alpha * zh(v)[k];
                }
            }
        }
    }
    if elu {
        for x in out.iter_mut().flatten() {
            if *x <= 0.0 {
                *x = x.exp_m1();
            }
        }
    }
    out
}

pub fn gat_layer_brute_force() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let g = random_graph(&mut rng, 4, 0.5);
        let h = random_matrix(&mut rng, 4, 5);
        for (heads, width, combine, elu) in [(3, 2, GatCombine::Concat, true), (1, 3, GatCombine::Single, false)] {
            let w = random_matrix(&mut rng, 5, heads * width);
            let att = random_matrix(&mut rng, heads, 2 * width);
            let got = gat_layer(&h, &g, &w, &att, heads, combine, elu).map_err(e)?;
            let want = gat_brute_force(&h, &g, &w, &att, heads, elu);
            let err = max_rel_err(&got, &want);
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("case {case} heads {heads}: relative error {err:e}"))?;
        }
    }
    Ok(format!("50 random 4-node cases, max relative error {worst:.1e}"))
}

pub fn cheb_layer_dense() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let g = random_graph(&mut rng, 5, 0.5);
        let h = random_matrix(&mut rng, 5, 4);
        let ws = [random_matrix(&mut rng, 4, 3), random_matrix(&mut rng, 4, 3)];
        let l = dense_laplacian(&dense_adjacency(&g));
        let eye: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let ll = mm(&l, &l);
        let t2: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| 2.0 * ll[i][j] - eye[i][j]).collect()).collect();
        let hf = to_f64(&h);
        for (k, relu) in [(1usize, true), (2, false), (3, true)] {
            let third = random_matrix(&mut rng, 4, 3);
            let weights: Vec<Matrix> = [ws[0].clone(), ws[1].clone(), third].into_iter().take(k).collect();
            let got = cheb_layer(&h, &scaled_laplacian(&g), &weights, relu).map_err(e)?;
            let terms = [&eye, &l, &t2];
            let mut want = vec![vec![0.0; 3]; 5];
            for (t, w) in terms.iter().zip(&weights) {
                let part = mm(&mm(t, &hf), &to_f64(w));
                for i in 0..5 {
                    for j in 0..3 {
                        want[i][j] += part[i][j];
                    }
                }
            }
            if relu {
                want.iter_mut().flatten().for_each(|x| *x = x.max(0.0));
            }
            let err = max_rel_err(&got, &want);
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("case {case} K={k}: relative error {err:e}"))?;
        }
    }
    Ok(format!("50 random 5-node cases, K = 1..3, max relative error {worst:.1e}"))
}

pub fn sgc_dense() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let g = random_graph(&mut rng, 6, 0.4);
        let x = random_matrix(&mut rng, 6, 4);
        let w = random_matrix(&mut rng, 4, 3);
        let a = dense_norm_adj(&dense_adjacency(&g));
        let mut logits = mm(&mm(&mm(&a, &a), &to_f64(&x)), &to_f64(&w));
        for row in logits.iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let got = sgc_forward(&x, &normalize_adjacency(&g), &w, 2).map_err(e)?;
        let err = max_rel_err(&got, &logits);
        worst = worst.max(err);
        ensure(err <= 1e-5, || format!("case {case}: relative error {err:e}"))?;
    }
    Ok(format!("50 random 6-node cases, K=2, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Training

/// Analytic gradients of the double-precision training loss against central
/// differences, for every architecture on an 8-node graph.
pub fn gradients_finite_difference() -> Result<String, String> {
    const STEP: f64 = 1e-5;
    const WD: f64 = 5e-4;
    let (g, x, split) = synthetic_graph(SyntheticSpec {
        seed: 2,
        nodes: 8,
        avg_degree: 3.0,
        num_features: 24,
        num_classes: 2,
    })
    .map_err(e)?;
    let ds = Dataset::new("toy", g, x, split).map_err(e)?;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for arch in Arch::ALL {
        let mut hyper = Hyper::standard(arch, 24, 2);
        hyper.hidden = 3;
        hyper.heads = 2;
        let model = ShadowModel::from_checkpoint(&ModelCheckpoint::init(arch, hyper, 11)).map_err(e)?;
        let data = TrainData::new(&ds, arch, &hyper).map_err(e)?;
        let (_, analytic) = model.loss_and_gradients(&data, WD);
        let mut m = model.clone();
        for (t, grad) in analytic.iter().enumerate() {
            for i in 0..grad.data.len() {
                let w0 = m.params[t].data[i];
                m.params[t].data[i] = w0 + STEP;
                let up = m.loss(&data, WD);
                m.params[t].data[i] = w0 - STEP;
                let down = m.loss(&data, WD);
                m.params[t].data[i] = w0;
                let numeric = (up - down) / (2.0 * STEP);
                let a = grad.data[i];
                let scale = a.abs().max(numeric.abs());
                ensure((a - numeric).abs() <= 1e-4 * scale + 1e-8, || {
                    format!("{arch} tensor {t} element {i}: analytic {a:e}, numeric {numeric:e}")
                })?;
                if scale > 1e-6 {
                    worst = worst.max((a - numeric).abs() / scale);
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} weights over 4 architectures, max relative error {worst:.1e}"))
}

pub fn trainer_planted_partition() -> Result<String, String> {
    let mut out = Vec::new();
    for (arch, nodes, classes, seed) in [(Arch::Sgc, 100, 2, 1), (Arch::Gcn, 300, 3, 4)] {
        let (g, x, split) = synthetic_graph(SyntheticSpec {
            seed,
            nodes,
            avg_degree: 3.0,
            num_features: 24,
            num_classes: classes,
        })
        .map_err(e)?;
        let ds = Dataset::new("planted", g, x, split).map_err(e)?;
        let ckpt = train_model(arch, &ds, &TrainConfig::recipe(arch)).map_err(e)?;
        let logits = model_logits(&ckpt, &ds.ops, &ds.features, &mut InterceptorRegistry::new()).map_err(e)?;
        let acc = evaluate_accuracy(&logits, &ds.split).map_err(e)?;
        ensure(acc > 0.9, || format!("{arch} on {nodes}-node planted partition: accuracy {acc:.3}"))?;
        out.push(format!("{arch} {acc:.3}"));
    }
    Ok(out.join(", "))
}

// ---------------------------------------------------------------------------
// Mitigation

/// The neighborhood clamp written over a dense adjacency.
pub fn topo_filter_reference(m: &Matrix, a: &[Vec<bool>]) -> Vec<Vec<f32>> {
    let n = m.rows();
    let mut out: Vec<Vec<f32>> = (0..n).map(|v| m.row(v).to_vec()).collect();
    for v in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&u| u != v && a[v][u]).collect();
        if nb.len() <= 1 {
            continue;
        }
        for i in 0..m.cols() {
            let vals: Vec<f32> = nb.iter().map(|&u| m.get(u, i)).filter(|x| !x.is_nan()).collect();
            let x = m.get(v, i);
            let x0 = if x.is_nan() { 0.0 } else { x };
            out[v][i] = if vals.is_empty() {
                x0
            } else {
                let c = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let f = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                x0.min(c).max(f)
            };
        }
    }
    out
}

pub fn topo_filter_brute_force() -> Result<String, String> {
    // Node 0 has value [3, 6, -2] and three neighbors.
    let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).map_err(e)?;
    let m = Matrix::from_rows(&[&[3.0, 6.0, -2.0], &[4.0, 4.0, -1.0], &[2.0, 4.0, -2.0], &[2.0, 3.0, -3.0]])
        .map_err(e)?;
    let got = topo_filter(&m, &g).map_err(e)?;
    ensure(got.row(0) == [3.0, 4.0, -2.0], || format!("worked example gave {:?}", got.row(0)))?;
    ensure((1..4).all(|v| got.row(v) == m.row(v)), || "degree-1 nodes changed".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut clipped = 0usize;
    for case in 0..100 {
        let p = rng.random_range(0.05..0.4);
        let g = random_graph(&mut rng, 20, p);
        let data = (0..20 * 3)
            .map(|_| match rng.random_range(0..100) {
                0..=7 => f32::NAN,
                8 => f32::INFINITY,
                9 => f32::NEG_INFINITY,
                _ => rng.random_range(-5.0f32..5.0),
            })
            .collect();
        let m = Matrix::new(20, 3, data).map_err(e)?;
        let got = topo_filter(&m, &g).map_err(e)?;
        let want = topo_filter_reference(&m, &dense_adjacency(&g));
        for v in 0..20 {
            for i in 0..3 {
                let (x, y) = (got.get(v, i), want[v][i]);
                ensure(x == y || (x.is_nan() && y.is_nan()), || {
                    format!("graph {case} node {v} feature {i}: {x} vs reference {y}")
                })?;
                if x.to_bits() != m.get(v, i).to_bits() {
                    clipped += 1;
                }
            }
        }
    }
    Ok(format!("worked example and 100 random 20-node graphs ({clipped} values changed)"))
}

pub fn mask_semantics() -> Result<String, String> {
    let cases = [
        (0x3F80_0000u32, 31u8, MaskMode::Bit, 0x3F80_0000u32),
        (0x3F80_0000, 30, MaskMode::Word, 0x0000_0000),
        (0xBF80_0000, 31, MaskMode::Bit, 0x3F80_0000),
    ];
    for (original, bit, mode, want) in cases {
        let injected = f32::from_bits(original ^ (1 << bit));
        let got = mask_repair(&[injected], [(0, bit)], mode).map_err(e)?[0].to_bits();
        ensure(got == want, || format!("{original:#010x} bit {bit} {mode:?}: {got:#010x}, want {want:#010x}"))?;
    }
    ensure(
        mask_repair(&[-1.0], [(0, 31)], MaskMode::Bit).map_err(e)?[0] == 1.0,
        || "masking the sign of -1.0 did not give +1.0".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100_000 {
        let w: u32 = rng.random();
        let b = rng.random_range(0..32u8);
        let bit = mask_repair(&[f32::from_bits(w)], [(0, b)], MaskMode::Bit).map_err(e)?[0].to_bits();
        ensure(bit == w & !(1 << b), || format!("bit mode on {w:#010x} bit {b}"))?;
        let word = mask_repair(&[f32::from_bits(w)], [(0, b)], MaskMode::Word).map_err(e)?[0].to_bits();
        ensure(word == 0, || format!("word mode on {w:#010x}"))?;
    }
    ensure(mask_repair(&[1.0], [(1, 0)], MaskMode::Bit).is_err(), || "out-of-range site accepted".into())?;
    Ok("documented cases, -1.0 stays +1.0, 100000 random words".into())
}

fn distances_from(g: &Graph, src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[src] = 0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Flipping bit 30 of a hidden activation in (0, 1) makes it huge; in a
/// two-layer GCN only the node and its neighbors see different logits.
pub fn activation_flip_locality() -> Result<String, String> {
    let (g, x, _) = synthetic_graph(SyntheticSpec {
        seed: 30,
        nodes: 40,
        avg_degree: 2.5,
        num_features: 16,
        num_classes: 4,
    })
    .map_err(e)?;
    let ops = GraphOperators::new(g);
    let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 16, 4), 3);
    let clean = model_forward(&ckpt, &ops, &x, &mut InterceptorRegistry::new()).map_err(e)?;
    let hidden = &clean.records[0].matrix;
    let mut tested = 0;
    for v in 0..ops.num_nodes() {
        let Some(col) = hidden.row(v).iter().position(|&h| h > 0.0 && h < 1.0) else {
            continue;
        };
        let element = v * hidden.cols() + col;
        let mut flipped = f32::NAN;
        let mut reg = InterceptorRegistry::new();
        reg.register(
            LayerSelector::layer("conv1"),
            FnInterceptor::new("flip30", |rec: &mut gnnfi_core::model::ActivationRecord, _: &Graph| {
                let d = rec.matrix.data_mut();
                d[element] = f32::from_bits(d[element].to_bits() ^ (1 << 30));
                flipped = d[element];
                Ok(())
            }),
        );
        let logits = model_logits(&ckpt, &ops, &x, &mut reg).map_err(e)?;
        drop(reg);
        let class = class_of(flipped);
        ensure(
            class == ValueClass::Infinite || (class == ValueClass::Finite && flipped.abs() >= 2f32.powi(64)),
            || format!("node {v}: flipped value {flipped:e}"),
        )?;
        let dist = distances_from(&ops.graph, v);
        for (u, &d) in dist.iter().enumerate() {
            let same = logits.row(u).iter().zip(clean.logits.row(u)).all(|(a, b)| a.to_bits() == b.to_bits());
            if d > 1 {
                ensure(same, || format!("flip at node {v} changed node {u} at distance {d}"))?;
            } else {
                ensure(!same, || format!("flip at node {v} left node {u} at distance {d} unchanged"))?;
            }
        }
        tested += 1;
    }
    ensure(tested >= 10, || format!("only {tested} nodes had a usable activation"))?;
    Ok(format!("{tested} single-site flips, effects confined to distance <= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_examples() {
        assert_eq!(decode_binary32(0x3F80_0000), 1.0);
        assert_eq!(decode_binary32(0xC020_0000), -2.5);
        assert_eq!(decode_binary32(1), 2f64.powi(-149));
        assert!(decode_binary32(0x7FC0_0000).is_nan());
        assert_eq!(decode_binary32(0xFF80_0000), f64::NEG_INFINITY);
    }

    #[test]
    fn chi_square_of_exact_counts_is_zero() {
        assert_eq!(per_bit_chi_square(&[500; 64], 1000, 0.5), 0.0);
        // One count off by one standard deviation contributes one.
        let mut c = [500u64; 64];
        c[0] = 500 + 15;
        let x = per_bit_chi_square(&c, 1000, 0.5);
        assert!((x - 225.0 / 250.0).abs() < 1e-12);
    }

    #[test]
    fn reference_filter_matches_worked_example() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let m = Matrix::from_rows(&[&[3.0, 6.0, -2.0], &[4.0, 4.0, -1.0], &[2.0, 4.0, -2.0], &[2.0, 3.0, -3.0]])
            .unwrap();
        assert_eq!(topo_filter_reference(&m, &dense_adjacency(&g))[0], [3.0, 4.0, -2.0]);
    }

    #[test]
    fn every_oracle_has_a_unique_name() {
        let names: std::collections::BTreeSet<_> = all_oracles().iter().map(|o| o.name).collect();
        assert_eq!(names.len(), all_oracles().len());
    }
}
