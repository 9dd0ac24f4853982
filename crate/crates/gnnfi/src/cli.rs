//! The `gnnfi` command line.
//!
//! Every flag can also be set in the file given with `--config`; flags win.
//! Exit status is 0 on success, 1 for usage errors and 2 when a run fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gnnfi_core::inject::{generate_error_map, FaultTarget};
use gnnfi_core::mitigation::{profile_ranges, RangeProfile};
use gnnfi_core::model::Arch;
use gnnfi_core::train::{train_model_with_report, TrainConfig};
use gnnfi_core::trial::{run_trial_with_map, target_census, MitigationKind, MitigationPolicy, TrialContext};

use crate::campaign::{
    aggregate, cutoff_report, default_bers, run_sweep, CampaignSpec, CurveKey, ModelStore, TrialMetrics, TrialResult,
    DEFAULT_DELTA,
};
use crate::checkpoint::{read_checkpoint, write_checkpoint, StoredModel};
use crate::config::{ConfigFile, Resolver, UsageError};
use crate::data::{load_dataset, DatasetName, PLANETOID};
use crate::error_map::{read_error_map, write_error_map};
use crate::oracles::{all_oracles, run_oracle};
use crate::profile::{read_profile, render_profile, write_profile};
use crate::report::{emit_report, emit_table, read_rows, rows_csv};

#[derive(Debug, Parser)]
#[command(name = "gnnfi", version, about = "Bit-flip fault injection for graph neural networks")]
pub struct Cli {
    /// Flat key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save its checkpoint.
    Train(TrainArgs),
    /// Record the fault-free value ranges of a checkpoint.
    Profile(ProfileArgs),
    /// Run one injection trial and print its row.
    Inject(InjectArgs),
    /// Run a campaign and write rows, aggregates, cutoffs and charts.
    Sweep(SweepArgs),
    /// Recompute aggregates, cutoffs and charts from a rows file.
    Report(ReportArgs),
    /// Run the reference checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// gcn, gat, cheb or sgc.
    #[arg(long)]
    pub arch: Option<String>,
    /// cora, citeseer, pubmed or synthetic[:key=value...].
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
    /// Directory with <name>.content and <name>.cites (default $GNNFI_DATA).
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<String>,
    /// Defaults to the dataset the checkpoint was trained on.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    /// model, gnn1, gnn2, act, weights:<layer> or act:<layer>.
    #[arg(long)]
    pub target: Option<String>,
    /// none, bit-mask, word-mask, weight-clip, act-clip or topo-filter.
    #[arg(long)]
    pub mitigation: Option<String>,
    /// Range profile for the clipping mitigations; computed when absent.
    #[arg(long, value_name = "FILE")]
    pub profile: Option<String>,
    #[arg(long)]
    pub ber: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Replay this error map instead of sampling one.
    #[arg(long, value_name = "FILE")]
    pub error_map: Option<String>,
    /// Write the error map used by the trial.
    #[arg(long, value_name = "FILE")]
    pub save_map: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub datasets: Option<String>,
    #[arg(long)]
    pub targets: Option<String>,
    #[arg(long)]
    pub mitigations: Option<String>,
    #[arg(long)]
    pub bers: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    /// Directory of <arch>_<dataset>.gfi checkpoints.
    #[arg(long, value_name = "DIR")]
    pub checkpoints: Option<String>,
    /// Train models that have no checkpoint.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub train_missing: Option<String>,
    /// Accuracy drop tolerated at the cutoff.
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    pub rows: Option<String>,
    /// Defaults to controls.csv beside the rows file.
    #[arg(long, value_name = "FILE")]
    pub controls: Option<String>,
    /// Defaults to the directory of the rows file.
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Run only the checks whose name contains this text.
    #[arg(long)]
    pub only: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<gnnfi_core::Error> for CliError {
    fn from(e: gnnfi_core::Error) -> Self {
        CliError::Runtime(crate::Error::from(e).into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

const SYNOPSIS: &str = "usage: gnnfi [--config FILE] <train|profile|inject|sweep|report|selftest> [FLAGS]\n       gnnfi <subcommand> --help";

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n{SYNOPSIS}");
            1
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let file = cli.config.as_deref().map(ConfigFile::read).transpose()?;
    let resolver = Resolver::new(file);
    match cli.command {
        Command::Train(a) => train(a, resolver, out),
        Command::Profile(a) => profile(a, resolver, out),
        Command::Inject(a) => inject(a, resolver, out),
        Command::Sweep(a) => sweep(a, resolver, out),
        Command::Report(a) => report(a, resolver, out),
        Command::Selftest(a) => selftest(a, resolver, out),
    }
}

fn train(a: TrainArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let arch: Arch = r.required("arch", a.arch.as_deref())?;
    let dataset: DatasetName = r.value("dataset", a.dataset.as_deref(), DatasetName::Planetoid("cora"))?;
    let path: PathBuf = r.required("out", a.out.as_deref())?;
    let data_dir: Option<PathBuf> = r.optional("data_dir", a.data_dir.as_deref())?;
    let recipe = TrainConfig::recipe(arch);
    let cfg = TrainConfig {
        seed: r.seed("seed", a.seed.as_deref(), recipe.seed)?,
        epochs: r.value("epochs", a.epochs.as_deref(), recipe.epochs)?,
        learning_rate: r.value("lr", a.lr.as_deref(), recipe.learning_rate)?,
        weight_decay: r.value("weight_decay", a.weight_decay.as_deref(), recipe.weight_decay)?,
        dropout: r.value("dropout", a.dropout.as_deref(), recipe.dropout)?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    r.finish("train")?;

    let ds = load_dataset(&dataset, data_dir.as_deref())?;
    let start = Instant::now();
    let (ckpt, report) = train_model_with_report(arch, &ds, &cfg)?;
    log::info!(
        "trained in {:.1}s: best epoch {}, val accuracy {:.4}, val loss {:.4}",
        start.elapsed().as_secs_f64(),
        report.best_epoch,
        report.val_accuracy,
        report.val_loss
    );
    let acc = TrialContext::new(&ckpt, &ds)?.baseline;
    let weights = ckpt.total_weights();
    write_checkpoint(
        &StoredModel {
            dataset: ds.name.clone(),
            ckpt,
        },
        &path,
    )?;
    writeln!(out, "{arch} {}: {weights} weights, test accuracy {acc:.4}", ds.name)?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

/// Loads a checkpoint and its dataset, defaulting to the stored dataset name.
fn load_subject(
    r: &mut Resolver,
    ckpt: Option<&str>,
    dataset: Option<&str>,
    data_dir: Option<&str>,
) -> Result<(StoredModel, gnnfi_core::graph::Dataset), CliError> {
    let path: PathBuf = r.required("ckpt", ckpt)?;
    let data_dir: Option<PathBuf> = r.optional("data_dir", data_dir)?;
    let stored = read_checkpoint(&path)?;
    let default: DatasetName = stored
        .dataset
        .parse()
        .map_err(|e: String| CliError::Runtime(anyhow::anyhow!("{}: stored dataset: {e}", path.display())))?;
    let name: DatasetName = r.value("dataset", dataset, default)?;
    let ds = load_dataset(&name, data_dir.as_deref())?;
    Ok((stored, ds))
}

fn profile(a: ProfileArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let (stored, ds) = load_subject(&mut r, a.ckpt.as_deref(), a.dataset.as_deref(), a.data_dir.as_deref())?;
    let path: PathBuf = r.required("out", a.out.as_deref())?;
    r.finish("profile")?;
    let p = profile_ranges(&stored.ckpt, &ds.ops, &ds.features)?;
    write_profile(&p, &path)?;
    write!(out, "{}", render_profile(&p))?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn inject(a: InjectArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let (stored, ds) = load_subject(&mut r, a.ckpt.as_deref(), a.dataset.as_deref(), a.data_dir.as_deref())?;
    let arch = stored.ckpt.arch;
    let target: FaultTarget = r.value("target", a.target.as_deref(), FaultTarget::ModelWise)?;
    let kind: MitigationKind = r.value("mitigation", a.mitigation.as_deref(), MitigationKind::None)?;
    let profile_path: Option<PathBuf> = r.optional("profile", a.profile.as_deref())?;
    let map_path: Option<PathBuf> = r.optional("error_map", a.error_map.as_deref())?;
    let ber: Option<f64> = r.optional("ber", a.ber.as_deref())?;
    let seed = r.seed("seed", a.seed.as_deref(), 0)?;
    let save_map: Option<PathBuf> = r.optional("save_map", a.save_map.as_deref())?;
    r.finish("inject")?;

    target.check(arch).map_err(|e| usage(e.to_string()))?;
    if !kind.applies_to(&target) {
        return Err(usage(format!("{kind} does not apply to target {target}")));
    }
    match (&map_path, ber) {
        (Some(_), Some(_)) => return Err(usage("give either --error-map or --ber, not both")),
        (None, None) => return Err(usage("give --ber (with --seed) or --error-map")),
        (None, Some(b)) if !(0.0..=1.0).contains(&b) => return Err(usage(format!("--ber {b} is not in [0, 1]"))),
        _ => {}
    }

    let ctx = TrialContext::new(&stored.ckpt, &ds)?;
    let profile: Option<RangeProfile> = match (&profile_path, kind.needs_profile()) {
        (Some(p), true) => Some(read_profile(p)?),
        (None, true) => Some(profile_ranges(&stored.ckpt, &ds.ops, &ds.features)?),
        (_, false) => None,
    };
    let policy = MitigationPolicy::from_kind(kind, profile.as_ref())?;
    let census = target_census(&ctx, &target)?;
    let map = match (&map_path, ber) {
        (Some(p), _) => read_error_map(p, &census)?,
        (None, Some(b)) => generate_error_map(&census, b, seed)?,
        (None, None) => unreachable!("checked above"),
    };
    if let Some(p) = &save_map {
        write_error_map(&map, p)?;
        log::info!("wrote {} ({} sites)", p.display(), map.len());
    }
    let start = Instant::now();
    let outcome = run_trial_with_map(&ctx, &target, &policy, &map)?;
    log::info!(
        "clean accuracy {:.4}, {} sites outside live values",
        ctx.baseline,
        outcome.skipped_sites
    );
    let row = TrialResult {
        key: CurveKey {
            model: arch,
            dataset: ds.name.clone(),
            target,
            mitigation: kind,
        },
        ber: map.ber,
        trial: 0,
        seed: map.seed,
        result: Ok(TrialMetrics {
            accuracy: outcome.accuracy,
            bits_flipped: outcome.bits_flipped,
            nan_count: outcome.nan_count(),
            non_nan_count: outcome.non_nan_count(),
        }),
        wall: start.elapsed(),
    };
    out.write_all(&rows_csv(std::slice::from_ref(&row))?)?;
    Ok(())
}

fn sweep(a: SweepArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let d = CampaignSpec::default();
    let spec = CampaignSpec {
        models: r.value("models", a.models.as_deref(), d.models)?,
        datasets: r
            .value("datasets", a.datasets.as_deref(), PLANETOID.map(DatasetName::Planetoid).to_vec())?
            .iter()
            .map(ToString::to_string)
            .collect(),
        targets: r.value("targets", a.targets.as_deref(), d.targets)?,
        mitigations: r.value("mitigations", a.mitigations.as_deref(), d.mitigations)?,
        bers: r.value("bers", a.bers.as_deref(), default_bers())?,
        trials: r.value("trials", a.trials.as_deref(), d.trials)?,
        seed: r.seed("seed", a.seed.as_deref(), d.seed)?,
    };
    let jobs: usize = r.value("jobs", a.jobs.as_deref(), 0)?;
    let store = ModelStore {
        data_dir: r.optional("data_dir", a.data_dir.as_deref())?,
        checkpoints: r.optional("checkpoints", a.checkpoints.as_deref())?,
        train_missing: r.value("train_missing", a.train_missing.as_deref(), false)?,
        train_seed: spec.seed,
    };
    let delta: f64 = r.value("delta", a.delta.as_deref(), DEFAULT_DELTA)?;
    let out_dir: PathBuf = r.required("out", a.out.as_deref())?;
    r.finish("sweep")?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if !(delta >= 0.0) {
        return Err(usage(format!("--delta {delta} must be non-negative")));
    }

    let subjects = store.prepare_subjects(&spec)?;
    let start = Instant::now();
    let table = run_sweep(&spec, &subjects, jobs)?;
    let failed = table.rows.iter().filter(|t| t.result.is_err()).count();
    log::info!(
        "{} trials in {:.1}s, {failed} failed",
        table.rows.len(),
        start.elapsed().as_secs_f64()
    );
    let cutoffs = cutoff_report(&table.points, &table.controls, delta)?;
    let written = emit_table(&out_dir, &table, &cutoffs)?;
    print_cutoffs(out, &cutoffs)?;
    for p in written {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn print_cutoffs(out: &mut dyn Write, cutoffs: &[crate::campaign::CutoffEntry]) -> std::io::Result<()> {
    for c in cutoffs {
        writeln!(
            out,
            "{} {} {} {}: baseline {:.4}, cutoff {}",
            c.key.model, c.key.dataset, c.key.target, c.key.mitigation, c.baseline, c.cutoff
        )?;
    }
    Ok(())
}

fn report(a: ReportArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let rows_path: PathBuf = r.required("rows", a.rows.as_deref())?;
    let parent = rows_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let controls_path: PathBuf = r.value("controls", a.controls.as_deref(), parent.join("controls.csv"))?;
    let out_dir: PathBuf = r.value("out", a.out.as_deref(), parent)?;
    let delta: f64 = r.value("delta", a.delta.as_deref(), DEFAULT_DELTA)?;
    r.finish("report")?;
    if !(delta >= 0.0) {
        return Err(usage(format!("--delta {delta} must be non-negative")));
    }
    let rows = read_rows(&rows_path)?;
    let controls = read_rows(&controls_path)?;
    let points = aggregate(&rows);
    let cutoffs = cutoff_report(&points, &controls, delta)?;
    let written = emit_report(&out_dir, None, None, &points, &cutoffs)?;
    print_cutoffs(out, &cutoffs)?;
    for p in written {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn selftest(a: SelftestArgs, mut r: Resolver, out: &mut dyn Write) -> CliResult {
    let only: Option<String> = r.optional("only", a.only.as_deref())?;
    r.finish("selftest")?;
    let oracles: Vec<_> = all_oracles()
        .into_iter()
        .filter(|o| only.as_deref().is_none_or(|s| o.name.contains(s)))
        .collect();
    if oracles.is_empty() {
        return Err(usage(format!("no check matches `{}`", only.unwrap_or_default())));
    }
    let mut failed = 0;
    for o in &oracles {
        let outcome = run_oracle(o);
        writeln!(out, "{}", outcome.line())?;
        failed += usize::from(!outcome.passed());
    }
    writeln!(out, "{} passed, {failed} failed", oracles.len() - failed)?;
    if failed > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{failed} check(s) failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("gnnfi").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_version_succeed() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("selftest"));
        assert_eq!(run_capture(&["--version"]).0, 0);
        assert_eq!(run_capture(&["inject", "--help"]).0, 0);
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = run_capture(&["train", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.to_lowercase().contains("usage"), "{err}");
        assert_eq!(run_capture(&[]).0, 1);
        let (code, _, err) = run_capture(&["train", "--out", "x.gfi"]);
        assert_eq!(code, 1);
        assert!(err.contains("--arch") && err.contains("usage: gnnfi"), "{err}");
        assert_eq!(run_capture(&["train", "--arch", "mlp", "--out", "x"]).0, 1);
        assert_eq!(run_capture(&["selftest", "--only", "no-such-check"]).0, 1);
        assert_eq!(run_capture(&["sweep", "--config", "/nonexistent/cfg", "--out", "o"]).0, 1);
    }

    #[test]
    fn runtime_errors_exit_two() {
        let (code, _, err) = run_capture(&["profile", "--ckpt", "/nonexistent.gfi", "--out", "p"]);
        assert_eq!(code, 2, "{err}");
    }
}
