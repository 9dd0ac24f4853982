//! Mitigations: detected-bit masking, range clipping and topology-aware
//! activation filtering.
//!
//! Detection is modeled as a perfect oracle: masking receives the sites of the
//! trial's error map.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphOperators};
use crate::inject::{ErrorMap, FaultTarget};
use crate::model::{model_forward, ActivationRecord, Interceptor, InterceptorRegistry, ModelCheckpoint};
use crate::tensor::Matrix;

/// A `[floor, ceiling]` interval used for clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipRange {
    floor: f32,
    ceiling: f32,
}

impl ClipRange {
    pub fn new(floor: f32, ceiling: f32) -> Result<Self> {
        // Written so that NaN bounds are rejected too.
        if !(floor <= ceiling) {
            return Err(Error::InvalidParameter(format!(
                "clip floor {floor} is above ceiling {ceiling}"
            )));
        }
        Ok(ClipRange { floor, ceiling })
    }

    pub fn floor(&self) -> f32 {
        self.floor
    }

    pub fn ceiling(&self) -> f32 {
        self.ceiling
    }

    /// `max(F, min(x, C))`, with NaN replaced by zero before clamping.
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        clamp_unchecked(x, self.ceiling, self.floor)
    }

    pub fn contains(&self, x: f32) -> bool {
        self.floor <= x && x <= self.ceiling
    }
}

#[inline]
fn clamp_unchecked(x: f32, ceiling: f32, floor: f32) -> f32 {
    let x = if x.is_nan() { 0.0 } else { x };
    if x > ceiling {
        ceiling
    } else if x < floor {
        floor
    } else {
        x
    }
}

/// `Clip(x, C, F) = max(F, min(x, C))`; NaN inputs become 0 and are then clamped.
pub fn clip_value(x: f32, ceiling: f32, floor: f32) -> Result<f32> {
    Ok(ClipRange::new(floor, ceiling)?.apply(x))
}

/// Value envelopes measured on a fault-free model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RangeProfile {
    pub weights: Option<ClipRange>,
    pub activations: Option<ClipRange>,
}

impl RangeProfile {
    pub fn weights(&self) -> Result<ClipRange> {
        self.weights
            .ok_or_else(|| Error::InvalidParameter("range profile has no weights entry".into()))
    }

    pub fn activations(&self) -> Result<ClipRange> {
        self.activations
            .ok_or_else(|| Error::InvalidParameter("range profile has no activations entry".into()))
    }
}

fn envelope<'a>(what: &str, values: impl Iterator<Item = &'a f32>) -> Result<ClipRange> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Structural(format!(
                "non-finite {what} value {v} found while profiling; the model is not clean"
            )));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Structural(format!("no {what} values to profile")));
    }
    ClipRange::new(lo, hi)
}

/// Weight range over every tensor, activation range over every record of one
/// clean full-graph forward pass.
pub fn profile_ranges(ckpt: &ModelCheckpoint, ops: &GraphOperators, features: &Matrix) -> Result<RangeProfile> {
    let weights = envelope("weight", ckpt.tensors.iter().flat_map(|t| t.data.iter()))?;
    let out = model_forward(ckpt, ops, features, &mut InterceptorRegistry::new())?;
    let activations = envelope(
        "activation",
        out.records.iter().flat_map(|r| r.matrix.data().iter()),
    )?;
    Ok(RangeProfile {
        weights: Some(weights),
        activations: Some(activations),
    })
}

/// Clips every weight into the profiled weight range.
pub fn apply_weight_clip(ckpt: &ModelCheckpoint, profile: &RangeProfile) -> Result<ModelCheckpoint> {
    let range = profile.weights()?;
    let mut out = ckpt.clone();
    for t in &mut out.tensors {
        t.data.iter_mut().for_each(|v| *v = range.apply(*v));
    }
    Ok(out)
}

/// Clips activation records into the profiled activation range.
#[derive(Debug, Clone, Copy)]
pub struct ActivationClip {
    range: ClipRange,
}

impl ActivationClip {
    pub fn new(profile: &RangeProfile) -> Result<Self> {
        Ok(ActivationClip {
            range: profile.activations()?,
        })
    }
}

impl Interceptor for ActivationClip {
    fn name(&self) -> &str {
        "activation-clip"
    }

    fn intercept(&mut self, record: &mut ActivationRecord, _graph: &Graph) -> Result<()> {
        let range = self.range;
        record.matrix.map_inplace(|v| range.apply(v));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskMode {
    /// Force each detected bit to 0.
    Bit,
    /// Zero every word holding a detected bit.
    Word,
}

/// Repairs `words` in place at the detected `(element, bit)` sites.
pub fn mask_repair_in_place(
    words: &mut [f32],
    detected: impl IntoIterator<Item = (usize, u8)>,
    mode: MaskMode,
) -> Result<()> {
    let len = words.len();
    for (element, bit) in detected {
        let Some(w) = words.get_mut(element) else {
            return Err(Error::Structural(format!(
                "detected site {element} is outside {len} words"
            )));
        };
        if bit >= 32 {
            return Err(Error::InvalidParameter(format!("bit index {bit} is not in 0..32")));
        }
        *w = match mode {
            MaskMode::Bit => f32::from_bits(w.to_bits() & !(1u32 << bit)),
            MaskMode::Word => f32::from_bits(0),
        };
    }
    Ok(())
}

pub fn mask_repair(
    words: &[f32],
    detected: impl IntoIterator<Item = (usize, u8)>,
    mode: MaskMode,
) -> Result<Vec<f32>> {
    let mut out = words.to_vec();
    mask_repair_in_place(&mut out, detected, mode)?;
    Ok(out)
}

/// Repairs the weight tensors `target` covers at every site of `map`.
pub fn mask_weights(
    ckpt: &ModelCheckpoint,
    map: &ErrorMap,
    target: &FaultTarget,
    mode: MaskMode,
) -> Result<ModelCheckpoint> {
    let mut out = ckpt.clone();
    for (idx, (id, _)) in map.census().iter().enumerate() {
        if !target.covers_tensor(id) {
            continue;
        }
        let tensor = out.tensor_mut(id)?;
        let sites = map.sites_for(idx).iter().map(|s| (s.element, s.bit));
        mask_repair_in_place(&mut tensor.data, sites, mode)?;
    }
    Ok(out)
}

/// Masks activation sites of `map` at runtime. Register it after the
/// injector that applies the same map.
#[derive(Debug, Clone)]
pub struct ActivationMask<'m> {
    map: &'m ErrorMap,
    mode: MaskMode,
}

impl<'m> ActivationMask<'m> {
    pub fn new(map: &'m ErrorMap, mode: MaskMode) -> Self {
        ActivationMask { map, mode }
    }
}

impl Interceptor for ActivationMask<'_> {
    fn name(&self) -> &str {
        match self.mode {
            MaskMode::Bit => "activation-bit-mask",
            MaskMode::Word => "activation-word-mask",
        }
    }

    fn intercept(&mut self, record: &mut ActivationRecord, _graph: &Graph) -> Result<()> {
        let Some(idx) = self.map.tensor_index(&record.layer_id) else {
            return Ok(());
        };
        let len = record.matrix.len();
        // Sites past the live extent were never injected, so nothing is detected there.
        let sites = self
            .map
            .sites_for(idx)
            .iter()
            .filter(|s| s.element < len)
            .map(|s| (s.element, s.bit));
        mask_repair_in_place(record.matrix.data_mut(), sites, self.mode)
    }
}

/// Clamps each feature of every node with more than one neighbor into the
/// interval its neighbors span on that feature.
///
/// The node itself is excluded from its neighbor set and every node reads the
/// unfiltered values of its neighbors. NaN neighbor values are ignored when
/// forming the interval; if all of them are NaN the value is only NaN-scrubbed.
pub fn topo_filter(matrix: &Matrix, graph: &Graph) -> Result<Matrix> {
    if matrix.rows() != graph.num_nodes() {
        return Err(Error::shape("topo_filter rows", graph.num_nodes(), matrix.rows()));
    }
    let width = matrix.cols();
    let mut out = matrix.clone();
    let mut ceiling = alloc::vec![0f32; width];
    let mut floor = alloc::vec![0f32; width];
    for v in 0..graph.num_nodes() {
        let neighbors = graph.neighbors(v);
        if neighbors.len() <= 1 {
            continue;
        }
        ceiling.fill(f32::NAN);
        floor.fill(f32::NAN);
        for &u in neighbors {
            for (i, &x) in matrix.row(u).iter().enumerate() {
                if x.is_nan() {
                    continue;
                }
                // Comparisons with a NaN accumulator are false, so the first value seeds it.
                if !(x <= ceiling[i]) {
                    ceiling[i] = x;
                }
                if !(x >= floor[i]) {
                    floor[i] = x;
                }
            }
        }
        for (i, x) in out.row_mut(v).iter_mut().enumerate() {
            *x = if ceiling[i].is_nan() {
                if x.is_nan() {
                    0.0
                } else {
                    *x
                }
            } else {
                clamp_unchecked(*x, ceiling[i], floor[i])
            };
        }
    }
    Ok(out)
}

/// [`topo_filter`] as an interceptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct TopoFilter;

impl Interceptor for TopoFilter {
    fn name(&self) -> &str {
        "topo-filter"
    }

    fn intercept(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()> {
        record.matrix = topo_filter(&record.matrix, graph)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inject::{generate_error_map, inject_weights, weight_census, FlipSite};
    use crate::model::{Arch, Hyper};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn clip_examples() {
        assert_eq!(clip_value(6.0, 4.0, 2.0).unwrap(), 4.0);
        assert_eq!(clip_value(3.0, 4.0, 2.0).unwrap(), 3.0);
        assert_eq!(clip_value(f32::NAN, 4.0, 2.0).unwrap(), 2.0);
        assert_eq!(clip_value(f32::NAN, 4.0, -2.0).unwrap(), 0.0);
        assert_eq!(clip_value(f32::INFINITY, 4.0, 2.0).unwrap(), 4.0);
        assert!(clip_value(1.0, 2.0, 4.0).is_err());
        assert!(clip_value(1.0, f32::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_monotone_and_bounded(a in any::<f32>(), b in any::<f32>(), lo in -10f32..10.0, w in 0f32..10.0) {
            let r = ClipRange::new(lo, lo + w).unwrap();
            let (ca, cb) = (r.apply(a), r.apply(b));
            prop_assert!(r.contains(ca) && r.contains(cb));
            if !a.is_nan() && !b.is_nan() && a <= b {
                prop_assert!(ca <= cb);
            }
        }

        #[test]
        fn empty_detection_is_identity(words in proptest::collection::vec(any::<u32>(), 0..20)) {
            let w: Vec<f32> = words.iter().map(|&b| f32::from_bits(b)).collect();
            for mode in [MaskMode::Bit, MaskMode::Word] {
                let r = mask_repair(&w, [], mode).unwrap();
                prop_assert!(r.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn bit_mask_examples() {
        let flip = |w: u32, b: u8| f32::from_bits(w ^ (1 << b));
        let r = mask_repair(&[flip(0x3F80_0000, 31)], [(0, 31)], MaskMode::Bit).unwrap();
        assert_eq!(r[0].to_bits(), 0x3F80_0000);
        let r = mask_repair(&[flip(0x3F80_0000, 30)], [(0, 30)], MaskMode::Word).unwrap();
        assert_eq!(r[0].to_bits(), 0);
        // -1.0 whose sign bit flipped cannot be restored by forcing the bit to 0.
        let r = mask_repair(&[flip(0xBF80_0000, 31)], [(0, 31)], MaskMode::Bit).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(mask_repair(&[1.0], [(1, 0)], MaskMode::Bit).is_err());
    }

    #[test]
    fn paper_worked_filter_example() {
        // Node 0 has neighbors 1, 2, 3.
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let m = Matrix::from_rows(&[
            &[3.0, 6.0, -2.0],
            &[4.0, 4.0, -1.0],
            &[2.0, 4.0, -2.0],
            &[2.0, 3.0, -3.0],
        ])
        .unwrap();
        let out = topo_filter(&m, &g).unwrap();
        assert_eq!(out.row(0), &[3.0, 4.0, -2.0]);
        // Leaves have a single neighbor and stay as they are.
        for v in 1..4 {
            assert_eq!(out.row(v), m.row(v));
        }
    }

    #[test]
    fn equal_neighbors_pin_the_node() {
        let g = Graph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
        let m = Matrix::from_rows(&[&[9.0, -9.0], &[1.5, 2.5], &[1.5, 2.5]]).unwrap();
        assert_eq!(topo_filter(&m, &g).unwrap().row(0), &[1.5, 2.5]);
    }

    #[test]
    fn filter_ignores_nan_neighbors() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let m = Matrix::from_rows(&[&[f32::NAN, 5.0], &[1.0, f32::NAN], &[2.0, f32::NAN], &[f32::NAN, f32::NAN]])
            .unwrap();
        let out = topo_filter(&m, &g).unwrap();
        assert_eq!(out.row(0), &[1.0, 5.0]);
    }

    #[test]
    fn weight_clip_repairs_infinity() {
        let mut ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 4, 2), 1);
        let range = ClipRange::new(-1.0, 1.0).unwrap();
        let profile = RangeProfile {
            weights: Some(range),
            activations: None,
        };
        ckpt.tensors[0].data[0] = f32::INFINITY;
        let out = apply_weight_clip(&ckpt, &profile).unwrap();
        assert_eq!(out.tensors[0].data[0], 1.0);
        assert!(apply_weight_clip(&ckpt, &RangeProfile::default()).is_err());
    }

    #[test]
    fn profile_weights_and_rejects_dirty() {
        let (g, x, _) = crate::synthetic::synthetic_graph(crate::synthetic::SyntheticSpec {
            seed: 0,
            nodes: 12,
            avg_degree: 2.0,
            num_features: 3,
            num_classes: 2,
        })
        .unwrap();
        let ops = GraphOperators::new(g);
        let mut ckpt = ModelCheckpoint::init(Arch::Sgc, Hyper::standard(Arch::Sgc, 3, 2), 0);
        ckpt.tensors[0].data = vec![-1.0, 0.0, 2.0, 0.5, 0.5, 0.5];
        let p = profile_ranges(&ckpt, &ops, &x).unwrap();
        assert_eq!((p.weights.unwrap().floor(), p.weights.unwrap().ceiling()), (-1.0, 2.0));
        assert!(p.activations.unwrap().ceiling() < 0.0);
        ckpt.tensors[0].data[0] = f32::NAN;
        assert!(matches!(profile_ranges(&ckpt, &ops, &x), Err(Error::Structural(_))));
    }

    #[test]
    fn word_mask_zeroes_every_hit_word() {
        let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 10, 3), 1);
        let census = weight_census(&ckpt, &FaultTarget::ModelWise).unwrap();
        let map = generate_error_map(&census, 0.01, 4).unwrap();
        let (bad, _) = inject_weights(&ckpt, &map, &FaultTarget::ModelWise).unwrap();
        let fixed = mask_weights(&bad, &map, &FaultTarget::ModelWise, MaskMode::Word).unwrap();
        for s in map.sites() {
            assert_eq!(fixed.tensors[s.tensor].data[s.element].to_bits(), 0);
        }
        let fixed = mask_weights(&bad, &map, &FaultTarget::ModelWise, MaskMode::Bit).unwrap();
        for s in map.sites() {
            assert_eq!(fixed.tensors[s.tensor].data[s.element].to_bits() & (1 << s.bit), 0);
        }
    }

    #[test]
    fn activation_mask_skips_sites_past_extent() {
        let map = ErrorMap::new(
            0.0,
            0,
            vec![("conv1".into(), 100)],
            vec![
                FlipSite {
                    tensor: 0,
                    element: 1,
                    bit: 31,
                },
                FlipSite {
                    tensor: 0,
                    element: 50,
                    bit: 0,
                },
            ],
        )
        .unwrap();
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let mut rec = ActivationRecord {
            layer_id: "conv1".into(),
            matrix: Matrix::from_rows(&[&[1.0], &[-2.0]]).unwrap(),
            post_nonlinearity: true,
        };
        ActivationMask::new(&map, MaskMode::Bit).intercept(&mut rec, &g).unwrap();
        assert_eq!(rec.matrix.data(), &[1.0, 2.0]);
    }
}
