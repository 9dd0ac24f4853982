use std::sync::Arc;

use gnnfi::campaign::{aggregate, cutoff_report, run_sweep, CampaignSpec, Subject};
use gnnfi::data::load_dataset;
use gnnfi::report::{emit_table, parse_rows, rows_csv};
use gnnfi_core::inject::FaultTarget;
use gnnfi_core::model::{Arch, Hyper, ModelCheckpoint};
use gnnfi_core::trial::MitigationKind;

const DATASET: &str = "synthetic:nodes=150:features=16:classes=3:seed=4";

fn subjects(archs: &[Arch]) -> Vec<Subject> {
    let ds = Arc::new(load_dataset(&DATASET.parse().unwrap(), None).unwrap());
    archs
        .iter()
        .map(|&a| Subject {
            ckpt: ModelCheckpoint::init(a, Hyper::standard(a, ds.num_features(), ds.num_classes()), 5),
            dataset: Arc::clone(&ds),
        })
        .collect()
}

fn spec(models: Vec<Arch>, targets: &[&str], mitigations: Vec<MitigationKind>, bers: Vec<f64>, trials: u32) -> CampaignSpec {
    CampaignSpec {
        models,
        datasets: vec![DATASET.parse::<gnnfi::data::DatasetName>().unwrap().to_string()],
        targets: targets.iter().map(|t| t.parse::<FaultTarget>().unwrap()).collect(),
        mitigations,
        bers,
        trials,
        seed: 11,
    }
}

#[test]
fn one_curve_two_rates_three_trials_is_six_rows() {
    let s = spec(vec![Arch::Gcn], &["model"], vec![MitigationKind::None], vec![1e-5, 1e-3], 3);
    let table = run_sweep(&s, &subjects(&[Arch::Gcn]), 2).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert_eq!(table.controls.len(), 1);
    assert_eq!(table.points.len(), 2);
    let csv = String::from_utf8(rows_csv(&table.rows).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 7);
    // Grid order: rate, then trial.
    let order: Vec<(f64, u32)> = table.rows.iter().map(|r| (r.ber, r.trial)).collect();
    assert_eq!(order, [(1e-5, 0), (1e-5, 1), (1e-5, 2), (1e-3, 0), (1e-3, 1), (1e-3, 2)]);
}

#[test]
fn serial_and_parallel_sweeps_are_identical() {
    let archs = vec![Arch::Gcn, Arch::Gat, Arch::Sgc];
    let s = spec(
        archs.clone(),
        &["model", "gnn1", "act"],
        vec![MitigationKind::None, MitigationKind::BitMask, MitigationKind::ActivationClip, MitigationKind::TopoFilter],
        vec![1e-4, 1e-3, 1e-2],
        3,
    );
    let subjects = subjects(&archs);
    let serial = run_sweep(&s, &subjects, 1).unwrap();
    let parallel = run_sweep(&s, &subjects, 4).unwrap();
    assert_eq!(serial.rows, parallel.rows);
    assert_eq!(serial.controls, parallel.controls);
    assert_eq!(serial.points, parallel.points);
    assert_eq!(rows_csv(&serial.rows).unwrap(), rows_csv(&parallel.rows).unwrap());
}

#[test]
fn emitted_tables_recompute_and_repeat_byte_for_byte() {
    let archs = [Arch::Gcn, Arch::Cheb];
    let s = spec(archs.to_vec(), &["model", "act"], vec![MitigationKind::None], vec![1e-6, 1e-3, 1e-2], 2);
    let subjects = subjects(&archs);
    let table = run_sweep(&s, &subjects, 0).unwrap();
    let cutoffs = cutoff_report(&table.points, &table.controls, 0.01).unwrap();

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = emit_table(a.path(), &table, &cutoffs).unwrap();
    let again = run_sweep(&s, &subjects, 3).unwrap();
    emit_table(b.path(), &again, &cutoff_report(&again.points, &again.controls, 0.01).unwrap()).unwrap();
    let svgs = files.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).count();
    assert_eq!(svgs, 2);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }

    let rows = parse_rows(&std::fs::read(a.path().join("rows.csv")).unwrap(), "rows.csv").unwrap();
    assert_eq!(aggregate(&rows), table.points);
}

#[test]
fn inapplicable_curves_are_skipped() {
    // SGC has a single weight layer, so there is no gnn2 curve.
    let s = spec(vec![Arch::Sgc], &["gnn2", "model"], vec![MitigationKind::None], vec![1e-3], 2);
    let table = run_sweep(&s, &subjects(&[Arch::Sgc]), 1).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.key.target == FaultTarget::ModelWise && r.result.is_ok()));
}
