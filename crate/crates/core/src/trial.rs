//! One fault-injection trial: generate a map, corrupt, mitigate, evaluate.

use alloc::format;
use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::inject::{
    census_checkpoints, generate_error_map, inject_weights, weight_census, ActivationInjector, Census, ErrorMap,
    FaultTarget, ShapeCensus,
};
use crate::mitigation::{apply_weight_clip, mask_weights, ActivationClip, ActivationMask, MaskMode, RangeProfile, TopoFilter};
use crate::model::{
    activation_census, evaluate_accuracy, model_forward, model_logits, InterceptorRegistry, LayerSelector,
    ModelCheckpoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MitigationKind {
    None,
    BitMask,
    WordMask,
    WeightClip,
    ActivationClip,
    TopoFilter,
}

impl MitigationKind {
    pub const ALL: [MitigationKind; 6] = [
        MitigationKind::None,
        MitigationKind::BitMask,
        MitigationKind::WordMask,
        MitigationKind::WeightClip,
        MitigationKind::ActivationClip,
        MitigationKind::TopoFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MitigationKind::None => "none",
            MitigationKind::BitMask => "bit-mask",
            MitigationKind::WordMask => "word-mask",
            MitigationKind::WeightClip => "weight-clip",
            MitigationKind::ActivationClip => "act-clip",
            MitigationKind::TopoFilter => "topo-filter",
        }
    }

    /// Masking protects both weights and activations; each clip and the
    /// topology filter protect only their own kind of value.
    pub fn applies_to(self, target: &FaultTarget) -> bool {
        match self {
            MitigationKind::None | MitigationKind::BitMask | MitigationKind::WordMask => true,
            MitigationKind::WeightClip => target.is_weights(),
            MitigationKind::ActivationClip | MitigationKind::TopoFilter => !target.is_weights(),
        }
    }

    pub fn needs_profile(self) -> bool {
        matches!(self, MitigationKind::WeightClip | MitigationKind::ActivationClip)
    }
}

impl fmt::Display for MitigationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MitigationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => MitigationKind::None,
            "bit-mask" | "bitmask" => MitigationKind::BitMask,
            "word-mask" | "wordmask" => MitigationKind::WordMask,
            "weight-clip" => MitigationKind::WeightClip,
            "act-clip" | "activation-clip" => MitigationKind::ActivationClip,
            "topo-filter" | "topo" => MitigationKind::TopoFilter,
            _ => return Err(Error::InvalidParameter(format!("unknown mitigation `{s}`"))),
        };
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MitigationPolicy {
    None,
    BitMask,
    WordMask,
    WeightClip(RangeProfile),
    ActivationClip(RangeProfile),
    /// Filters the selected activation records.
    TopoFilter(LayerSelector),
}

impl MitigationPolicy {
    /// Builds a policy, attaching `profile` where the kind needs one.
    pub fn from_kind(kind: MitigationKind, profile: Option<&RangeProfile>) -> Result<Self> {
        let need = || {
            profile
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("{kind} needs a range profile")))
        };
        Ok(match kind {
            MitigationKind::None => MitigationPolicy::None,
            MitigationKind::BitMask => MitigationPolicy::BitMask,
            MitigationKind::WordMask => MitigationPolicy::WordMask,
            MitigationKind::WeightClip => MitigationPolicy::WeightClip(need()?),
            MitigationKind::ActivationClip => MitigationPolicy::ActivationClip(need()?),
            MitigationKind::TopoFilter => MitigationPolicy::TopoFilter(LayerSelector::All),
        })
    }

    pub fn kind(&self) -> MitigationKind {
        match self {
            MitigationPolicy::None => MitigationKind::None,
            MitigationPolicy::BitMask => MitigationKind::BitMask,
            MitigationPolicy::WordMask => MitigationKind::WordMask,
            MitigationPolicy::WeightClip(_) => MitigationKind::WeightClip,
            MitigationPolicy::ActivationClip(_) => MitigationKind::ActivationClip,
            MitigationPolicy::TopoFilter(_) => MitigationKind::TopoFilter,
        }
    }

    fn mask_mode(&self) -> Option<MaskMode> {
        match self {
            MitigationPolicy::BitMask => Some(MaskMode::Bit),
            MitigationPolicy::WordMask => Some(MaskMode::Word),
            _ => None,
        }
    }
}

/// A checkpoint and dataset with the clean quantities every trial reuses.
#[derive(Debug, Clone)]
pub struct TrialContext<'a> {
    pub ckpt: &'a ModelCheckpoint,
    pub dataset: &'a Dataset,
    /// Element counts of the clean activation records.
    pub activations: ShapeCensus,
    /// Test accuracy of the clean model.
    pub baseline: f64,
}

impl<'a> TrialContext<'a> {
    pub fn new(ckpt: &'a ModelCheckpoint, dataset: &'a Dataset) -> Result<Self> {
        let clean = model_forward(ckpt, &dataset.ops, &dataset.features, &mut InterceptorRegistry::new())?;
        Ok(TrialContext {
            ckpt,
            dataset,
            activations: activation_census(&clean.records),
            baseline: evaluate_accuracy(&clean.logits, &dataset.split)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub accuracy: f64,
    /// Bits flipped in live values.
    pub bits_flipped: u64,
    /// Map sites that landed outside the target or the live extent.
    pub skipped_sites: u64,
    /// Value-class transitions caused by the injection, before mitigation.
    pub census: Census,
}

impl TrialOutcome {
    pub fn nan_count(&self) -> u64 {
        self.census.nan_producing
    }

    pub fn non_nan_count(&self) -> u64 {
        self.census.non_nan
    }
}

/// Element counts of the values `target` corrupts: weight tensors, or the
/// selected activation records of a clean pass.
pub fn target_census(ctx: &TrialContext<'_>, target: &FaultTarget) -> Result<ShapeCensus> {
    target.check(ctx.ckpt.arch)?;
    match target {
        FaultTarget::Activations(selector) => Ok(ctx
            .activations
            .iter()
            .filter(|(id, _)| selector.matches(id))
            .cloned()
            .collect()),
        _ => weight_census(ctx.ckpt, target),
    }
}

/// Generates the trial's error map, injects it, applies the mitigation and
/// evaluates test accuracy. Deterministic in `seed`.
pub fn run_trial(
    ctx: &TrialContext<'_>,
    target: &FaultTarget,
    policy: &MitigationPolicy,
    ber: f64,
    seed: u64,
) -> Result<TrialOutcome> {
    check_policy(target, policy)?;
    let map = generate_error_map(&target_census(ctx, target)?, ber, seed)?;
    run_trial_with_map(ctx, target, policy, &map)
}

fn check_policy(target: &FaultTarget, policy: &MitigationPolicy) -> Result<()> {
    if !policy.kind().applies_to(target) {
        return Err(Error::NotApplicable {
            mitigation: policy.kind().to_string(),
            target: target.to_string(),
        });
    }
    Ok(())
}

/// [`run_trial`] with a given error map, e.g. one replayed from a file. The
/// map's census names the tensors or records it addresses.
pub fn run_trial_with_map(
    ctx: &TrialContext<'_>,
    target: &FaultTarget,
    policy: &MitigationPolicy,
    map: &ErrorMap,
) -> Result<TrialOutcome> {
    target.check(ctx.ckpt.arch)?;
    check_policy(target, policy)?;
    let ds = ctx.dataset;
    match target {
        FaultTarget::Activations(selector) => {
            let mut injector = ActivationInjector::new(map, target)?;
            let mut registry = InterceptorRegistry::new();
            registry.register(selector.clone(), &mut injector);
            match policy {
                MitigationPolicy::ActivationClip(profile) => {
                    registry.register(LayerSelector::All, ActivationClip::new(profile)?)
                }
                MitigationPolicy::TopoFilter(sel) => registry.register(sel.clone(), TopoFilter),
                _ => {
                    if let Some(mode) = policy.mask_mode() {
                        registry.register(selector.clone(), ActivationMask::new(map, mode));
                    }
                }
            }
            let logits = model_logits(ctx.ckpt, &ds.ops, &ds.features, &mut registry)?;
            drop(registry);
            let stats = injector.stats();
            Ok(TrialOutcome {
                accuracy: evaluate_accuracy(&logits, &ds.split)?,
                bits_flipped: stats.applied,
                skipped_sites: stats.skipped,
                census: injector.census(),
            })
        }
        _ => {
            let (corrupt, stats) = inject_weights(ctx.ckpt, map, target)?;
            let errors = census_checkpoints(ctx.ckpt, &corrupt)?;
            let mitigated = match policy {
                MitigationPolicy::WeightClip(profile) => apply_weight_clip(&corrupt, profile)?,
                _ => match policy.mask_mode() {
                    Some(mode) => mask_weights(&corrupt, map, target, mode)?,
                    None => corrupt,
                },
            };
            let logits = model_logits(&mitigated, &ds.ops, &ds.features, &mut InterceptorRegistry::new())?;
            Ok(TrialOutcome {
                accuracy: evaluate_accuracy(&logits, &ds.split)?,
                bits_flipped: stats.applied,
                skipped_sites: stats.skipped,
                census: errors,
            })
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial, hashed from its grid coordinates.
///
/// The mitigation is deliberately not an input: every mitigation of a grid
/// point faces the same corruption.
pub fn derive_seed(master: u64, model: &str, dataset: &str, target: &str, ber: f64, trial: u32) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for part in [model, dataset, target] {
        h = fnv1a(h, part.as_bytes());
        h = fnv1a(h, &[0xff]);
    }
    h = fnv1a(h, &ber.to_bits().to_le_bytes());
    h = fnv1a(h, &trial.to_le_bytes());
    splitmix64(h)
}
