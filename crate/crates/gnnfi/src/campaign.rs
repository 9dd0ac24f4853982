//! BER sweeps over models, datasets, fault targets and mitigations.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use gnnfi_core::graph::Dataset;
use gnnfi_core::inject::FaultTarget;
use gnnfi_core::mitigation::profile_ranges;
use gnnfi_core::model::{Arch, Hyper, ModelCheckpoint};
use gnnfi_core::train::{train_model_with_report, TrainConfig};
use gnnfi_core::trial::{derive_seed, run_trial, MitigationKind, MitigationPolicy, TrialContext};

use crate::checkpoint::{read_checkpoint, write_checkpoint, StoredModel};
use crate::data::{load_dataset, DatasetName};
use crate::error::{Error, Result};

/// Absolute accuracy drop tolerated before a BER counts as past the cutoff.
pub const DEFAULT_DELTA: f64 = 0.01;

/// Eight BERs, one per decade from 1e-9 to 1e-2.
pub fn default_bers() -> Vec<f64> {
    (2..=9).rev().map(|e| format!("1e-{e}").parse().unwrap()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub models: Vec<Arch>,
    pub datasets: Vec<String>,
    pub targets: Vec<FaultTarget>,
    pub mitigations: Vec<MitigationKind>,
    pub bers: Vec<f64>,
    pub trials: u32,
    pub seed: u64,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        CampaignSpec {
            models: Arch::ALL.to_vec(),
            datasets: vec!["cora".into(), "citeseer".into(), "pubmed".into()],
            targets: ["model", "gnn1", "gnn2", "act"].iter().map(|t| t.parse().unwrap()).collect(),
            mitigations: vec![MitigationKind::None],
            bers: default_bers(),
            trials: 10,
            seed: 0,
        }
    }
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(gnnfi_core::Error::InvalidParameter(m).into());
        if self.models.is_empty() || self.datasets.is_empty() || self.targets.is_empty() || self.mitigations.is_empty()
        {
            return bad("models, datasets, targets and mitigations must be non-empty".into());
        }
        if self.bers.is_empty() {
            return bad("no BERs to sweep".into());
        }
        if let Some(b) = self.bers.iter().find(|&&b| !(b > 0.0 && b <= 1.0)) {
            return bad(format!("BER {b} is outside (0, 1]"));
        }
        if self.bers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("BERs must be strictly increasing".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        Ok(())
    }

    /// Target/mitigation pairs swept for `arch`, skipping targets the
    /// architecture lacks and mitigations that cannot protect the target.
    pub fn curves_for(&self, arch: Arch) -> Vec<(&FaultTarget, MitigationKind)> {
        let mut out = Vec::new();
        for t in &self.targets {
            if t.check(arch).is_err() {
                continue;
            }
            for &m in &self.mitigations {
                if m.applies_to(t) {
                    out.push((t, m));
                }
            }
        }
        out
    }
}

/// One trained model and the dataset it is evaluated on.
#[derive(Debug, Clone)]
pub struct Subject {
    pub ckpt: ModelCheckpoint,
    pub dataset: Arc<Dataset>,
}

impl Subject {
    pub fn arch(&self) -> Arch {
        self.ckpt.arch
    }
}

/// Identifies one robustness curve.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CurveKey {
    pub model: Arch,
    pub dataset: String,
    pub target: FaultTarget,
    pub mitigation: MitigationKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub accuracy: f64,
    pub bits_flipped: u64,
    pub nan_count: u64,
    pub non_nan_count: u64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub key: CurveKey,
    pub ber: f64,
    pub trial: u32,
    pub seed: u64,
    /// Metrics, or the error that stopped the trial.
    pub result: std::result::Result<TrialMetrics, String>,
    pub wall: Duration,
}

/// Wall time is not part of a result's identity.
impl PartialEq for TrialResult {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
            && self.ber.to_bits() == other.ber.to_bits()
            && self.trial == other.trial
            && self.seed == other.seed
            && self.result == other.result
    }
}

impl TrialResult {
    pub fn accuracy(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|m| m.accuracy)
    }

    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(e) => format!("error: {e}"),
        }
    }
}

/// Mean and sample standard deviation of one (curve, BER) point over its
/// successful trials.
#[derive(Debug, Clone)]
pub struct Point {
    pub key: CurveKey,
    pub ber: f64,
    pub mean_accuracy: f64,
    pub stddev: f64,
    pub trials: usize,
}

/// Statistics compare bit for bit, so NaN points of all-failed trials are
/// equal to themselves.
impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
            && self.ber.to_bits() == other.ber.to_bits()
            && self.mean_accuracy.to_bits() == other.mean_accuracy.to_bits()
            && self.stddev.to_bits() == other.stddev.to_bits()
            && self.trials == other.trials
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<TrialResult>,
    /// One BER-0 trial per curve: the clean reference of that curve.
    pub controls: Vec<TrialResult>,
    pub points: Vec<Point>,
}

/// Groups rows by (curve, BER) in first-appearance order. Failed rows are
/// left out; a point whose every trial failed has NaN statistics.
pub fn aggregate(rows: &[TrialResult]) -> Vec<Point> {
    let mut index: HashMap<(CurveKey, u64), usize> = HashMap::new();
    let mut groups: Vec<(CurveKey, f64, Vec<f64>)> = Vec::new();
    for r in rows {
        let slot = *index.entry((r.key.clone(), r.ber.to_bits())).or_insert_with(|| {
            groups.push((r.key.clone(), r.ber, Vec::new()));
            groups.len() - 1
        });
        if let Some(a) = r.accuracy() {
            groups[slot].2.push(a);
        }
    }
    groups
        .into_iter()
        .map(|(key, ber, xs)| {
            let (mean_accuracy, stddev) = mean_std(&xs);
            Point {
                key,
                ber,
                mean_accuracy,
                stddev,
                trials: xs.len(),
            }
        })
        .collect()
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    Ber(f64),
    /// No swept BER stayed within tolerance.
    BelowMinimum,
}

impl Cutoff {
    /// `log10` of the cutoff, placing "below minimum" one decade under `min_ber`.
    pub fn decade(self, min_ber: f64) -> f64 {
        match self {
            Cutoff::Ber(b) => b.log10(),
            Cutoff::BelowMinimum => min_ber.log10() - 1.0,
        }
    }
}

impl std::fmt::Display for Cutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cutoff::Ber(b) => write!(f, "{b:e}"),
            Cutoff::BelowMinimum => f.write_str("below-minimum"),
        }
    }
}

/// Largest swept BER whose mean accuracy is at least `baseline - delta`.
pub fn cutoff_rate(curve: &[Point], baseline: f64, delta: f64) -> Result<Cutoff> {
    let Some(first) = curve.first() else {
        return Err(gnnfi_core::Error::InvalidParameter("cutoff of an empty curve".into()).into());
    };
    if curve.iter().any(|p| p.key != first.key) {
        return Err(gnnfi_core::Error::InvalidParameter("cutoff over points of several curves".into()).into());
    }
    let floor = baseline - delta;
    Ok(curve
        .iter()
        .filter(|p| p.ber > 0.0 && p.mean_accuracy >= floor)
        .map(|p| p.ber)
        .fold(None, |best: Option<f64>, b| Some(best.map_or(b, |x| x.max(b))))
        .map_or(Cutoff::BelowMinimum, Cutoff::Ber))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffEntry {
    pub key: CurveKey,
    pub baseline: f64,
    pub cutoff: Cutoff,
}

/// Cutoffs of every curve that has a successful control, in point order.
pub fn cutoff_report(points: &[Point], controls: &[TrialResult], delta: f64) -> Result<Vec<CutoffEntry>> {
    let mut curves: Vec<(CurveKey, Vec<Point>)> = Vec::new();
    for p in points {
        match curves.iter_mut().find(|(k, _)| *k == p.key) {
            Some((_, v)) => v.push(p.clone()),
            None => curves.push((p.key.clone(), vec![p.clone()])),
        }
    }
    let mut out = Vec::new();
    for (key, curve) in curves {
        let Some(baseline) = controls.iter().find(|c| c.key == key).and_then(TrialResult::accuracy) else {
            log::warn!("no control for {} {} {} {}; cutoff skipped", key.model, key.dataset, key.target, key.mitigation);
            continue;
        };
        let cutoff = cutoff_rate(&curve, baseline, delta)?;
        out.push(CutoffEntry { key, baseline, cutoff });
    }
    Ok(out)
}

struct Task {
    subject: usize,
    policy: usize,
    key: CurveKey,
    target: FaultTarget,
    ber: f64,
    trial: u32,
    seed: u64,
}

/// Runs every trial of `spec` on `subjects` with `jobs` worker threads
/// (0 = one per core). Rows come back in grid order whatever the thread count.
pub fn run_sweep(spec: &CampaignSpec, subjects: &[Subject], jobs: usize) -> Result<SweepTable> {
    spec.validate()?;
    let mut contexts = Vec::new();
    let mut policies: Vec<MitigationPolicy> = Vec::new();
    let mut policy_index: HashMap<(usize, MitigationKind), usize> = HashMap::new();
    let mut tasks = Vec::new();
    let mut controls = Vec::new();

    for &arch in &spec.models {
        for ds in &spec.datasets {
            let si = subjects
                .iter()
                .position(|s| s.arch() == arch && s.dataset.name == *ds)
                .ok_or_else(|| gnnfi_core::Error::InvalidParameter(format!("no {arch} model for {ds}")))?;
            let subject = &subjects[si];
            let curves = spec.curves_for(arch);
            for t in &spec.targets {
                if let Err(e) = t.check(arch) {
                    log::info!("skipping {t} for {arch}: {e}");
                }
            }
            let profile = if curves.iter().any(|(_, m)| m.needs_profile()) {
                Some(profile_ranges(&subject.ckpt, &subject.dataset.ops, &subject.dataset.features)?)
            } else {
                None
            };
            if contexts.len() <= si {
                contexts.resize_with(si + 1, || None);
            }
            if contexts[si].is_none() {
                contexts[si] = Some(TrialContext::new(&subject.ckpt, &subject.dataset)?);
            }
            for (target, kind) in curves {
                let pi = *policy_index.entry((si, kind)).or_insert_with(|| policies.len());
                if pi == policies.len() {
                    policies.push(MitigationPolicy::from_kind(kind, profile.as_ref())?);
                }
                let key = CurveKey {
                    model: arch,
                    dataset: ds.clone(),
                    target: target.clone(),
                    mitigation: kind,
                };
                let label = target.to_string();
                let task = |ber: f64, trial: u32, key: CurveKey| Task {
                    subject: si,
                    policy: pi,
                    key,
                    target: target.clone(),
                    ber,
                    trial,
                    seed: derive_seed(spec.seed, arch.name(), ds, &label, ber, trial),
                };
                controls.push(task(0.0, 0, key.clone()));
                for &ber in &spec.bers {
                    for trial in 0..spec.trials {
                        tasks.push(task(ber, trial, key.clone()));
                    }
                }
            }
        }
    }

    let run = |t: &Task| -> TrialResult {
        let start = Instant::now();
        let ctx = contexts[t.subject].as_ref().expect("context built for every subject");
        let result = run_trial(ctx, &t.target, &policies[t.policy], t.ber, t.seed)
            .map(|o| TrialMetrics {
                accuracy: o.accuracy,
                bits_flipped: o.bits_flipped,
                nan_count: o.nan_count(),
                non_nan_count: o.non_nan_count(),
            })
            .map_err(|e| {
                log::warn!(
                    "trial failed: {} {} {} {} ber={:e} trial={}: {e}",
                    t.key.model,
                    t.key.dataset,
                    t.key.target,
                    t.key.mitigation,
                    t.ber,
                    t.trial
                );
                e.to_string()
            });
        TrialResult {
            key: t.key.clone(),
            ber: t.ber,
            trial: t.trial,
            seed: t.seed,
            result,
            wall: start.elapsed(),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| gnnfi_core::Error::InvalidParameter(format!("thread pool: {e}")))?;
    log::info!(
        "sweeping {} trials and {} controls on {} threads",
        tasks.len(),
        controls.len(),
        pool.current_num_threads()
    );
    let (controls, rows) = pool.install(|| {
        let c: Vec<TrialResult> = controls.par_iter().map(run).collect();
        let r: Vec<TrialResult> = tasks.par_iter().map(run).collect();
        (c, r)
    });
    let points = aggregate(&rows);
    Ok(SweepTable { rows, controls, points })
}

/// Where `prepare_subjects` finds data and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ModelStore {
    pub data_dir: Option<PathBuf>,
    /// Directory of `<arch>_<dataset>.gfi` checkpoints.
    pub checkpoints: Option<PathBuf>,
    /// Train models with no checkpoint on disk (and save them when a
    /// checkpoint directory is set).
    pub train_missing: bool,
    pub train_seed: u64,
}

/// File stem used for a (model, dataset) checkpoint.
pub fn checkpoint_stem(arch: Arch, dataset: &str) -> String {
    let ds: String = dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}_{ds}", arch.name())
}

impl ModelStore {
    /// Loads each dataset once and finds or trains each model.
    pub fn prepare_subjects(&self, spec: &CampaignSpec) -> Result<Vec<Subject>> {
        let mut out = Vec::new();
        for ds_name in &spec.datasets {
            let name: DatasetName = ds_name
                .parse()
                .map_err(|e: String| gnnfi_core::Error::InvalidParameter(e))?;
            let dataset = Arc::new(load_dataset(&name, self.data_dir.as_deref())?);
            for &arch in &spec.models {
                let ckpt = self.model(arch, &dataset)?;
                out.push(Subject {
                    ckpt,
                    dataset: Arc::clone(&dataset),
                });
            }
        }
        Ok(out)
    }

    fn model(&self, arch: Arch, dataset: &Dataset) -> Result<ModelCheckpoint> {
        let path = self
            .checkpoints
            .as_ref()
            .map(|d| d.join(format!("{}.gfi", checkpoint_stem(arch, &dataset.name))));
        if let Some(p) = path.as_ref().filter(|p| p.is_file()) {
            let stored = read_checkpoint(p)?;
            let expect = Hyper::standard(arch, dataset.num_features(), dataset.num_classes());
            if stored.ckpt.arch != arch || stored.ckpt.hyper.in_features != expect.in_features
                || stored.ckpt.hyper.num_classes != expect.num_classes
            {
                return Err(Error::format(
                    p.display().to_string(),
                    format!("checkpoint does not fit {arch} on {}", dataset.name),
                ));
            }
            log::info!("loaded {}", p.display());
            return Ok(stored.ckpt);
        }
        if !self.train_missing {
            return Err(gnnfi_core::Error::InvalidParameter(format!(
                "no checkpoint for {arch} on {}{}",
                dataset.name,
                path.map(|p| format!(" at {}", p.display())).unwrap_or_default()
            ))
            .into());
        }
        let cfg = TrainConfig {
            seed: self.train_seed,
            ..TrainConfig::recipe(arch)
        };
        let (ckpt, report) = train_model_with_report(arch, dataset, &cfg)?;
        log::info!(
            "trained {arch} on {}: best epoch {}, val accuracy {:.4}",
            dataset.name,
            report.best_epoch,
            report.val_accuracy
        );
        if let Some(p) = path {
            write_checkpoint(
                &StoredModel {
                    dataset: dataset.name.clone(),
                    ckpt: ckpt.clone(),
                },
                &p,
            )?;
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(m: MitigationKind) -> CurveKey {
        CurveKey {
            model: Arch::Gcn,
            dataset: "d".into(),
            target: FaultTarget::ModelWise,
            mitigation: m,
        }
    }

    fn point(ber: f64, mean: f64) -> Point {
        Point {
            key: key(MitigationKind::None),
            ber,
            mean_accuracy: mean,
            stddev: 0.0,
            trials: 1,
        }
    }

    #[test]
    fn default_bers_are_decades() {
        let b = default_bers();
        assert_eq!(b.len(), 8);
        assert_eq!(b[0], 1e-9);
        assert_eq!(b[7], 1e-2);
        for w in b.windows(2) {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
        }
        CampaignSpec::default().validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut s = CampaignSpec::default();
        s.bers = vec![1e-3, 1e-3];
        assert!(s.validate().is_err());
        s.bers = vec![0.0, 1e-3];
        assert!(s.validate().is_err());
        s.bers = vec![1e-3, 1.5];
        assert!(s.validate().is_err());
        s.bers = vec![1e-3];
        s.trials = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn curves_skip_inapplicable_pairs() {
        let spec = CampaignSpec {
            mitigations: MitigationKind::ALL.to_vec(),
            ..CampaignSpec::default()
        };
        // 3 weight targets x 4 kinds + 1 activation target x 5 kinds.
        assert_eq!(spec.curves_for(Arch::Gcn).len(), 17);
        // No second layer.
        assert_eq!(spec.curves_for(Arch::Sgc).len(), 13);
    }

    #[test]
    fn cutoff_examples() {
        let flat: Vec<Point> = default_bers().into_iter().map(|b| point(b, 0.8)).collect();
        assert_eq!(cutoff_rate(&flat, 0.8, DEFAULT_DELTA).unwrap(), Cutoff::Ber(1e-2));
        let knee: Vec<Point> = default_bers()
            .into_iter()
            .map(|b| point(b, if b <= 1e-6 { 0.805 } else { 0.5 }))
            .collect();
        assert_eq!(cutoff_rate(&knee, 0.81, DEFAULT_DELTA).unwrap(), Cutoff::Ber(1e-6));
        let dead: Vec<Point> = default_bers().into_iter().map(|b| point(b, 0.1)).collect();
        assert_eq!(cutoff_rate(&dead, 0.8, DEFAULT_DELTA).unwrap(), Cutoff::BelowMinimum);
        assert!(cutoff_rate(&[], 0.8, DEFAULT_DELTA).is_err());
        let mut mixed = flat.clone();
        mixed[0].key = key(MitigationKind::BitMask);
        assert!(cutoff_rate(&mixed, 0.8, DEFAULT_DELTA).is_err());
        assert_eq!(Cutoff::BelowMinimum.decade(1e-9), -10.0);
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn aggregate_skips_failed_rows() {
        let row = |trial, result| TrialResult {
            key: key(MitigationKind::None),
            ber: 1e-3,
            trial,
            seed: 0,
            result,
            wall: Duration::ZERO,
        };
        let m = |a| {
            Ok(TrialMetrics {
                accuracy: a,
                bits_flipped: 0,
                nan_count: 0,
                non_nan_count: 0,
            })
        };
        let pts = aggregate(&[row(0, m(0.5)), row(1, Err("boom".into())), row(2, m(0.7))]);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].trials, 2);
        assert!((pts[0].mean_accuracy - 0.6).abs() < 1e-15);
    }

    #[test]
    fn stems_are_file_safe() {
        assert_eq!(checkpoint_stem(Arch::Gat, "cora"), "gat_cora");
        assert_eq!(checkpoint_stem(Arch::Sgc, "synthetic:nodes=5"), "sgc_synthetic_nodes_5");
    }
}
