//! Bit-error-rate driven error maps and their application to weights and
//! activation outputs.
//!
//! An error map is realized by drawing the number of flipped bits from
//! `Binomial(total_bits, ber)` and then choosing that many distinct bit
//! positions uniformly. This has the same law as flipping every bit
//! independently with probability `ber`, without visiting every bit.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::bits::{classify_word, ValueClass};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{ActivationRecord, Arch, Interceptor, LayerSelector, ModelCheckpoint};

/// One flipped bit: `element` indexes the flattened (row-major) tensor and
/// `bit` is 0 for the least significant bit of the binary32 word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlipSite {
    pub tensor: usize,
    pub element: usize,
    pub bit: u8,
}

/// Named element counts, in the order tensors are laid out for sampling.
pub type ShapeCensus = Vec<(String, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub ber: f64,
    pub seed: u64,
    census: ShapeCensus,
    sites: Vec<FlipSite>,
}

impl ErrorMap {
    /// Builds a map from explicit sites, checking bounds, order and uniqueness.
    pub fn new(ber: f64, seed: u64, census: ShapeCensus, sites: Vec<FlipSite>) -> Result<Self> {
        for s in &sites {
            let Some((id, len)) = census.get(s.tensor) else {
                return Err(Error::Structural(format!("site references tensor #{}", s.tensor)));
            };
            if s.element >= *len || s.bit >= 32 {
                return Err(Error::Structural(format!(
                    "site ({id}, {}, {}) is outside the tensor's {len} words",
                    s.element, s.bit
                )));
            }
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structural("error map sites must be sorted and unique".into()));
        }
        Ok(ErrorMap {
            ber,
            seed,
            census,
            sites,
        })
    }

    pub fn empty(census: ShapeCensus) -> Self {
        ErrorMap {
            ber: 0.0,
            seed: 0,
            census,
            sites: Vec::new(),
        }
    }

    pub fn census(&self) -> &[(String, usize)] {
        &self.census
    }

    pub fn sites(&self) -> &[FlipSite] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn total_bits(&self) -> u64 {
        self.census.iter().map(|(_, n)| *n as u64 * 32).sum()
    }

    pub fn tensor_id(&self, site: &FlipSite) -> &str {
        &self.census[site.tensor].0
    }

    pub fn tensor_index(&self, id: &str) -> Option<usize> {
        self.census.iter().position(|(name, _)| name == id)
    }

    /// Sites of one tensor, sorted by element then bit.
    pub fn sites_for(&self, tensor: usize) -> &[FlipSite] {
        let lo = self.sites.partition_point(|s| s.tensor < tensor);
        let hi = self.sites.partition_point(|s| s.tensor <= tensor);
        &self.sites[lo..hi]
    }

    /// `(element, xor mask)` per corrupted word of one tensor.
    pub fn word_masks(&self, tensor: usize) -> Vec<(usize, u32)> {
        let mut out: Vec<(usize, u32)> = Vec::new();
        for s in self.sites_for(tensor) {
            match out.last_mut() {
                Some((e, mask)) if *e == s.element => *mask |= 1 << s.bit,
                _ => out.push((s.element, 1 << s.bit)),
            }
        }
        out
    }
}

/// Draws an error map over the bits of `census` at bit-error rate `ber`.
pub fn generate_error_map(census: &[(String, usize)], ber: f64, seed: u64) -> Result<ErrorMap> {
    if !(0.0..=1.0).contains(&ber) {
        return Err(Error::InvalidParameter(format!("bit error rate {ber} is outside [0, 1]")));
    }
    let total_bits: u64 = census.iter().map(|(_, n)| *n as u64 * 32).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips = if ber == 0.0 || total_bits == 0 {
        0
    } else {
        Binomial::new(total_bits, ber)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(&mut rng) as usize
    };
    let mut positions: Vec<u64> = if flips == 0 {
        Vec::new()
    } else {
        rand::seq::index::sample(&mut rng, total_bits as usize, flips)
            .into_iter()
            .map(|p| p as u64)
            .collect()
    };
    positions.sort_unstable();

    let mut sites = Vec::with_capacity(positions.len());
    let mut tensor = 0usize;
    let mut start_word = 0u64;
    for p in positions {
        let word = p / 32;
        while word >= start_word + census[tensor].1 as u64 {
            start_word += census[tensor].1 as u64;
            tensor += 1;
        }
        sites.push(FlipSite {
            tensor,
            element: (word - start_word) as usize,
            bit: (p % 32) as u8,
        });
    }
    Ok(ErrorMap {
        ber,
        seed,
        census: census.to_vec(),
        sites,
    })
}

/// Where faults are injected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FaultTarget {
    /// Every weight tensor.
    ModelWise,
    /// Weight tensors of one layer (`conv1`, `conv2`).
    LayerWeights(String),
    /// Activation outputs of the selected layers.
    Activations(LayerSelector),
}

impl FaultTarget {
    pub fn is_weights(&self) -> bool {
        !matches!(self, FaultTarget::Activations(_))
    }

    /// Checks that the target refers to layers the architecture has.
    pub fn check(&self, arch: Arch) -> Result<()> {
        let layer = match self {
            FaultTarget::LayerWeights(l) => l,
            FaultTarget::Activations(LayerSelector::Layer(l)) => l,
            _ => return Ok(()),
        };
        if arch.layers().contains(&layer.as_str()) {
            Ok(())
        } else {
            Err(Error::UnknownLayer(format!("{layer} (in {arch})")))
        }
    }

    pub fn covers_tensor(&self, tensor_name: &str) -> bool {
        match self {
            FaultTarget::ModelWise => true,
            FaultTarget::LayerWeights(l) => tensor_name.split('.').next() == Some(l.as_str()),
            FaultTarget::Activations(_) => false,
        }
    }
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::ModelWise => f.write_str("model"),
            FaultTarget::LayerWeights(l) => match l.strip_prefix("conv") {
                Some(n) => write!(f, "gnn{n}"),
                None => write!(f, "weights:{l}"),
            },
            FaultTarget::Activations(LayerSelector::All) => f.write_str("act"),
            FaultTarget::Activations(LayerSelector::Layer(l)) => write!(f, "act:{l}"),
        }
    }
}

impl FromStr for FaultTarget {
    type Err = Error;

    /// Accepts `model`, `gnn1`/`gnn-1`, `gnn2`/`gnn-2`, `weights:<layer>`,
    /// `act`/`activations` and `act:<layer>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let t = match lower.as_str() {
            "model" | "modelwise" | "model-wise" => FaultTarget::ModelWise,
            "gnn1" | "gnn-1" => FaultTarget::LayerWeights("conv1".into()),
            "gnn2" | "gnn-2" => FaultTarget::LayerWeights("conv2".into()),
            "act" | "activations" | "activation" => FaultTarget::Activations(LayerSelector::All),
            other => {
                if let Some(l) = other.strip_prefix("weights:") {
                    FaultTarget::LayerWeights(l.into())
                } else if let Some(l) = other.strip_prefix("act:") {
                    FaultTarget::Activations(LayerSelector::layer(l))
                } else {
                    return Err(Error::InvalidParameter(format!("unknown fault target `{s}`")));
                }
            }
        };
        Ok(t)
    }
}

/// Element counts of the weight tensors a target covers.
pub fn weight_census(ckpt: &ModelCheckpoint, target: &FaultTarget) -> Result<ShapeCensus> {
    if !target.is_weights() {
        return Err(Error::InvalidParameter(format!("{target} is not a weight target")));
    }
    target.check(ckpt.arch)?;
    Ok(ckpt
        .tensors
        .iter()
        .filter(|t| target.covers_tensor(&t.name))
        .map(|t| (t.name.clone(), t.len()))
        .collect())
}

/// How many transitions an injection caused, by value class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Census {
    /// Changed elements that ended up NaN.
    pub nan_producing: u64,
    /// Changed elements that ended up anything other than NaN.
    pub non_nan: u64,
    /// `transitions[from][to]` over changed elements, indexed by [`ValueClass::index`].
    pub transitions: [[u64; 5]; 5],
}

impl Census {
    pub fn record(&mut self, before: u32, after: u32) {
        if before == after {
            return;
        }
        let (from, to) = (classify_word(before), classify_word(after));
        self.transitions[from.index()][to.index()] += 1;
        if to == ValueClass::NaN {
            self.nan_producing += 1;
        } else {
            self.non_nan += 1;
        }
    }

    pub fn changed(&self) -> u64 {
        self.nan_producing + self.non_nan
    }

    pub fn merge(&mut self, other: &Census) {
        self.nan_producing += other.nan_producing;
        self.non_nan += other.non_nan;
        for (a, b) in self.transitions.iter_mut().zip(&other.transitions) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn transition(&self, from: ValueClass, to: ValueClass) -> u64 {
        self.transitions[from.index()][to.index()]
    }
}

/// Compares two equally shaped value buffers word by word.
pub fn census_errors(before: &[f32], after: &[f32]) -> Result<Census> {
    if before.len() != after.len() {
        return Err(Error::shape("census_errors", before.len(), after.len()));
    }
    let mut c = Census::default();
    for (a, b) in before.iter().zip(after) {
        c.record(a.to_bits(), b.to_bits());
    }
    Ok(c)
}

pub fn census_checkpoints(before: &ModelCheckpoint, after: &ModelCheckpoint) -> Result<Census> {
    if before.tensors.len() != after.tensors.len() {
        return Err(Error::shape(
            "census_checkpoints",
            before.tensors.len(),
            after.tensors.len(),
        ));
    }
    let mut c = Census::default();
    for (a, b) in before.tensors.iter().zip(&after.tensors) {
        if a.shape != b.shape {
            return Err(Error::shape("census_checkpoints tensor", &a.name, &b.name));
        }
        c.merge(&census_errors(&a.data, &b.data)?);
    }
    Ok(c)
}

pub fn census_records(before: &ActivationRecord, after: &ActivationRecord) -> Result<Census> {
    if before.matrix.shape() != after.matrix.shape() {
        return Err(Error::shape(
            "census_records",
            format!("{:?}", before.matrix.shape()),
            format!("{:?}", after.matrix.shape()),
        ));
    }
    census_errors(before.matrix.data(), after.matrix.data())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InjectionStats {
    /// Bits flipped.
    pub applied: u64,
    /// Sites skipped because they fall outside the target or the live extent.
    pub skipped: u64,
}

/// Applies `map` to the target tensors of a copy of `ckpt`.
pub fn inject_weights(
    ckpt: &ModelCheckpoint,
    map: &ErrorMap,
    target: &FaultTarget,
) -> Result<(ModelCheckpoint, InjectionStats)> {
    if !target.is_weights() {
        return Err(Error::InvalidParameter(format!("{target} is not a weight target")));
    }
    target.check(ckpt.arch)?;
    let mut out = ckpt.clone();
    let mut stats = InjectionStats::default();
    for (idx, (id, _)) in map.census().iter().enumerate() {
        let tensor = out.tensor_mut(id)?;
        let sites = map.sites_for(idx);
        if !target.covers_tensor(id) {
            stats.skipped += sites.len() as u64;
            continue;
        }
        for s in sites {
            let Some(v) = tensor.data.get_mut(s.element) else {
                return Err(Error::Structural(format!(
                    "site element {} beyond tensor {id} of {} values",
                    s.element,
                    tensor.data.len()
                )));
            };
            *v = f32::from_bits(v.to_bits() ^ (1 << s.bit));
            stats.applied += 1;
        }
    }
    Ok((out, stats))
}

/// Flips mapped bits of activation records during a forward pass.
///
/// The map's census names activation records by layer id; elements index the
/// record's matrix row-major.
#[derive(Debug, Clone)]
pub struct ActivationInjector<'m> {
    map: &'m ErrorMap,
    selector: LayerSelector,
    stats: InjectionStats,
    census: Census,
}

impl<'m> ActivationInjector<'m> {
    pub fn new(map: &'m ErrorMap, target: &FaultTarget) -> Result<Self> {
        let FaultTarget::Activations(selector) = target else {
            return Err(Error::InvalidParameter(format!("{target} is not an activation target")));
        };
        Ok(ActivationInjector {
            map,
            selector: selector.clone(),
            stats: InjectionStats::default(),
            census: Census::default(),
        })
    }

    pub fn selector(&self) -> &LayerSelector {
        &self.selector
    }

    pub fn stats(&self) -> InjectionStats {
        self.stats
    }

    /// Value-class transitions caused by the flips applied so far.
    pub fn census(&self) -> Census {
        self.census
    }
}

impl Interceptor for ActivationInjector<'_> {
    fn name(&self) -> &str {
        "activation-injector"
    }

    fn intercept(&mut self, record: &mut ActivationRecord, _graph: &Graph) -> Result<()> {
        if !self.selector.matches(&record.layer_id) {
            return Ok(());
        }
        let Some(idx) = self.map.tensor_index(&record.layer_id) else {
            return Ok(());
        };
        let data = record.matrix.data_mut();
        for (element, mask) in self.map.word_masks(idx) {
            let bits = u64::from(mask.count_ones());
            match data.get_mut(element) {
                Some(v) => {
                    let before = v.to_bits();
                    *v = f32::from_bits(before ^ mask);
                    self.census.record(before, before ^ mask);
                    self.stats.applied += bits;
                }
                None => self.stats.skipped += bits,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyper;
    use alloc::vec;

    fn census(n: usize) -> ShapeCensus {
        vec![("t".into(), n)]
    }

    #[test]
    fn zero_ber_is_empty() {
        assert!(generate_error_map(&census(100), 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn unit_ber_flips_everything() {
        let m = generate_error_map(&census(10), 1.0, 1).unwrap();
        assert_eq!(m.len(), 320);
        for (i, s) in m.sites().iter().enumerate() {
            assert_eq!((s.element, s.bit as usize), (i / 32, i % 32));
        }
    }

    #[test]
    fn rejects_invalid_ber() {
        assert!(generate_error_map(&census(1), -0.1, 1).is_err());
        assert!(generate_error_map(&census(1), 1.5, 1).is_err());
        assert!(generate_error_map(&census(1), f64::NAN, 1).is_err());
    }

    #[test]
    fn flip_count_within_three_sigma() {
        let m = generate_error_map(&census(100_000), 1e-2, 42).unwrap();
        let n = m.len() as f64;
        assert!((n - 32_000.0).abs() <= 534.0, "{n}");
    }

    #[test]
    fn sites_span_tensors_in_census_order() {
        let c: ShapeCensus = vec![("a".into(), 3), ("b".into(), 2)];
        let m = generate_error_map(&c, 1.0, 0).unwrap();
        assert_eq!(m.sites_for(0).len(), 96);
        assert_eq!(m.sites_for(1).len(), 64);
        assert_eq!(m.tensor_id(&m.sites()[100]), "b");
        assert!(ErrorMap::new(0.5, 0, c.clone(), m.sites().to_vec()).is_ok());
    }

    #[test]
    fn map_is_deterministic() {
        let c = census(5000);
        assert_eq!(
            generate_error_map(&c, 1e-3, 9).unwrap(),
            generate_error_map(&c, 1e-3, 9).unwrap()
        );
        assert_ne!(
            generate_error_map(&c, 1e-3, 9).unwrap(),
            generate_error_map(&c, 1e-3, 10).unwrap()
        );
    }

    #[test]
    fn explicit_sites_are_validated() {
        let c = census(2);
        let s = |element, bit| FlipSite {
            tensor: 0,
            element,
            bit,
        };
        assert!(ErrorMap::new(0.0, 0, c.clone(), vec![s(2, 0)]).is_err());
        assert!(ErrorMap::new(0.0, 0, c.clone(), vec![s(1, 0), s(0, 0)]).is_err());
        assert!(ErrorMap::new(0.0, 0, c.clone(), vec![s(0, 1), s(0, 1)]).is_err());
        assert!(ErrorMap::new(0.0, 0, c, vec![s(0, 1), s(1, 31)]).is_ok());
    }

    #[test]
    fn target_parsing() {
        for s in ["model", "gnn1", "gnn2", "act", "act:conv2", "weights:conv1"] {
            let t: FaultTarget = s.parse().unwrap();
            let back: FaultTarget = t.to_string().parse().unwrap();
            assert_eq!(t, back);
        }
        assert_eq!("gnn1".parse::<FaultTarget>().unwrap().to_string(), "gnn1");
        assert!("bogus".parse::<FaultTarget>().is_err());
    }

    #[test]
    fn sgc_has_no_second_layer() {
        let ckpt = ModelCheckpoint::init(Arch::Sgc, Hyper::standard(Arch::Sgc, 4, 2), 0);
        assert!(weight_census(&ckpt, &"gnn2".parse().unwrap()).is_err());
        assert_eq!(weight_census(&ckpt, &FaultTarget::ModelWise).unwrap(), vec![("conv1.weight".into(), 8)]);
    }

    #[test]
    fn empty_map_copies_checkpoint() {
        let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 6, 2), 0);
        let map = ErrorMap::empty(weight_census(&ckpt, &FaultTarget::ModelWise).unwrap());
        let (out, stats) = inject_weights(&ckpt, &map, &FaultTarget::ModelWise).unwrap();
        assert!(out.bit_eq(&ckpt));
        assert_eq!(stats, InjectionStats::default());
    }

    #[test]
    fn double_injection_restores() {
        let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 6, 2), 0);
        let c = weight_census(&ckpt, &FaultTarget::ModelWise).unwrap();
        let map = ErrorMap::new(
            0.0,
            0,
            c,
            vec![FlipSite {
                tensor: 1,
                element: 3,
                bit: 30,
            }],
        )
        .unwrap();
        let (once, stats) = inject_weights(&ckpt, &map, &FaultTarget::ModelWise).unwrap();
        assert_eq!(stats.applied, 1);
        assert!(!once.bit_eq(&ckpt));
        let (twice, _) = inject_weights(&once, &map, &FaultTarget::ModelWise).unwrap();
        assert!(twice.bit_eq(&ckpt));
    }

    #[test]
    fn out_of_target_sites_are_counted() {
        let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 6, 2), 0);
        let c = weight_census(&ckpt, &FaultTarget::ModelWise).unwrap();
        let map = generate_error_map(&c, 0.5, 3).unwrap();
        let target = FaultTarget::LayerWeights("conv2".into());
        let (out, stats) = inject_weights(&ckpt, &map, &target).unwrap();
        assert!(out.tensors[0].bit_eq(&ckpt.tensors[0]));
        assert_eq!(stats.skipped as usize, map.sites_for(0).len());
        assert_eq!(stats.applied as usize, map.sites_for(1).len());
    }

    #[test]
    fn unknown_tensor_is_an_error() {
        let ckpt = ModelCheckpoint::init(Arch::Gcn, Hyper::standard(Arch::Gcn, 6, 2), 0);
        let map = ErrorMap::empty(vec![("conv9.weight".into(), 4)]);
        assert!(matches!(
            inject_weights(&ckpt, &map, &FaultTarget::ModelWise),
            Err(Error::UnknownTensor(_))
        ));
    }

    #[test]
    fn census_of_all_single_bit_flips_of_one() {
        // Enumerated by hand: 1.0 = 0x3F800000.
        // bit 31 → -1.0 (finite); bit 30 → +inf; bits 23..29 clear exponent bits
        // (finite, e.g. bit 23 gives 0.5); bits 0..22 set mantissa (finite).
        let before = vec![1.0f32; 32];
        let after: Vec<f32> = (0..32).map(|b| f32::from_bits(0x3F80_0000 ^ (1 << b))).collect();
        let c = census_errors(&before, &after).unwrap();
        assert_eq!(c.nan_producing, 0);
        assert_eq!(c.non_nan, 32);
        assert_eq!(c.transition(ValueClass::Finite, ValueClass::Infinite), 1);
        assert_eq!(c.transition(ValueClass::Finite, ValueClass::Finite), 31);
    }

    #[test]
    fn census_of_all_single_bit_flips_of_infinity() {
        // +inf = 0x7F800000: mantissa bits give NaN, exponent bits give finite
        // values, the sign bit gives -inf.
        let before = vec![f32::INFINITY; 32];
        let after: Vec<f32> = (0..32).map(|b| f32::from_bits(0x7F80_0000 ^ (1 << b))).collect();
        let c = census_errors(&before, &after).unwrap();
        assert_eq!(c.nan_producing, 23);
        assert_eq!(c.transition(ValueClass::Infinite, ValueClass::Finite), 8);
        assert_eq!(c.transition(ValueClass::Infinite, ValueClass::Infinite), 1);
    }

    #[test]
    fn census_identical_and_sign_flip() {
        assert_eq!(census_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), Census::default());
        let c = census_errors(&[1.0, 2.0], &[1.0, -2.0]).unwrap();
        assert_eq!((c.nan_producing, c.non_nan), (0, 1));
        assert!(census_errors(&[1.0], &[1.0, 2.0]).is_err());
    }
}
