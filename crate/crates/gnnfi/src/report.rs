//! CSV tables and charts of a sweep.
//!
//! * `rows.csv`: one line per trial.
//! * `controls.csv`: the BER-0 trial of each curve, same columns.
//! * `agg.csv`: mean and sample standard deviation per (curve, BER).
//! * `cutoff.csv`: cutoff BER and baseline per curve.
//! * `<model>_<dataset>.svg`: one chart per (model, dataset), one series per
//!   (target, mitigation).

use std::path::{Path, PathBuf};
use std::time::Duration;

use gnnfi_core::model::Arch;

use crate::campaign::{checkpoint_stem, CurveKey, CutoffEntry, Point, SweepTable, TrialMetrics, TrialResult};
use crate::error::{Error, Result};
use crate::svg::{render_chart, Series};

pub const ROW_HEADER: [&str; 12] = [
    "model",
    "dataset",
    "target",
    "mitigation",
    "ber",
    "trial",
    "seed",
    "accuracy",
    "bits_flipped",
    "nan_count",
    "non_nan_count",
    "status",
];

pub const AGG_HEADER: [&str; 8] = [
    "model",
    "dataset",
    "target",
    "mitigation",
    "ber",
    "mean_accuracy",
    "stddev",
    "trials",
];

pub const CUTOFF_HEADER: [&str; 6] = ["model", "dataset", "target", "mitigation", "baseline", "cutoff"];

fn key_fields(k: &CurveKey) -> [String; 4] {
    [
        k.model.to_string(),
        k.dataset.clone(),
        k.target.to_string(),
        k.mitigation.to_string(),
    ]
}

fn float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

fn ber(x: f64) -> String {
    format!("{x:e}")
}

fn row_record(r: &TrialResult) -> Vec<String> {
    let mut v = key_fields(&r.key).to_vec();
    v.push(ber(r.ber));
    v.push(r.trial.to_string());
    v.push(r.seed.to_string());
    match &r.result {
        Ok(m) => {
            v.push(m.accuracy.to_string());
            v.push(m.bits_flipped.to_string());
            v.push(m.nan_count.to_string());
            v.push(m.non_nan_count.to_string());
        }
        Err(_) => v.extend(std::iter::repeat_n(String::new(), 4)),
    }
    v.push(r.status());
    v
}

fn csv_bytes<I: IntoIterator<Item = Vec<String>>>(header: &[&str], records: I) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::format("csv", e.to_string()))
}

pub fn rows_csv(rows: &[TrialResult]) -> Result<Vec<u8>> {
    csv_bytes(&ROW_HEADER, rows.iter().map(row_record))
}

pub fn agg_csv(points: &[Point]) -> Result<Vec<u8>> {
    csv_bytes(
        &AGG_HEADER,
        points.iter().map(|p| {
            let mut v = key_fields(&p.key).to_vec();
            v.extend([ber(p.ber), float(p.mean_accuracy), float(p.stddev), p.trials.to_string()]);
            v
        }),
    )
}

pub fn cutoff_csv(entries: &[CutoffEntry]) -> Result<Vec<u8>> {
    csv_bytes(
        &CUTOFF_HEADER,
        entries.iter().map(|e| {
            let mut v = key_fields(&e.key).to_vec();
            v.extend([float(e.baseline), e.cutoff.to_string()]);
            v
        }),
    )
}

/// Parses a `rows.csv` (or `controls.csv`) back into trial results.
pub fn parse_rows(bytes: &[u8], file: &str) -> Result<Vec<TrialResult>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.iter().ne(ROW_HEADER) {
        return Err(Error::format(file, format!("expected header {}", ROW_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |col: &str, e: &dyn std::fmt::Display| Error::parse(file, line, format!("{col}: {e}"));
        let model: Arch = rec[0].parse().map_err(|e| bad("model", &e))?;
        let target = rec[2].parse().map_err(|e| bad("target", &e))?;
        let mitigation = rec[3].parse().map_err(|e| bad("mitigation", &e))?;
        let ber: f64 = rec[4].parse().map_err(|e| bad("ber", &e))?;
        let trial = rec[5].parse().map_err(|e| bad("trial", &e))?;
        let seed = rec[6].parse().map_err(|e| bad("seed", &e))?;
        let status = &rec[11];
        let result = if status == "ok" {
            Ok(TrialMetrics {
                accuracy: rec[7].parse().map_err(|e| bad("accuracy", &e))?,
                bits_flipped: rec[8].parse().map_err(|e| bad("bits_flipped", &e))?,
                nan_count: rec[9].parse().map_err(|e| bad("nan_count", &e))?,
                non_nan_count: rec[10].parse().map_err(|e| bad("non_nan_count", &e))?,
            })
        } else if let Some(msg) = status.strip_prefix("error: ") {
            Err(msg.to_string())
        } else {
            return Err(bad("status", &format!("unknown status `{status}`")));
        };
        out.push(TrialResult {
            key: CurveKey {
                model,
                dataset: rec[1].to_string(),
                target,
                mitigation,
            },
            ber,
            trial,
            seed,
            result,
            wall: Duration::ZERO,
        });
    }
    Ok(out)
}

pub fn read_rows(path: &Path) -> Result<Vec<TrialResult>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&bytes, &path.display().to_string())
}

/// One chart per (model, dataset), in first-appearance order.
pub fn charts(points: &[Point]) -> Vec<(String, String)> {
    let mut groups: Vec<((Arch, String), Vec<Series>)> = Vec::new();
    for p in points.iter().filter(|p| p.ber > 0.0) {
        let g = (p.key.model, p.key.dataset.clone());
        let label = format!("{} / {}", p.key.target, p.key.mitigation);
        let idx = match groups.iter().position(|(k, _)| *k == g) {
            Some(i) => i,
            None => {
                groups.push((g, Vec::new()));
                groups.len() - 1
            }
        };
        let series = &mut groups[idx].1;
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((p.ber, p.mean_accuracy)),
            None => series.push(Series {
                label,
                points: vec![(p.ber, p.mean_accuracy)],
            }),
        }
    }
    groups
        .into_iter()
        .map(|((model, dataset), series)| {
            let title = format!("{} on {dataset}: mean test accuracy under bit flips", model.name().to_uppercase());
            (format!("{}.svg", checkpoint_stem(model, &dataset)), render_chart(&title, &series))
        })
        .collect()
}

fn put(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    crate::error::write(&path, bytes)?;
    written.push(path);
    Ok(())
}

/// Writes aggregates, cutoffs and charts, plus row tables when given.
pub fn emit_report(
    out: &Path,
    rows: Option<&[TrialResult]>,
    controls: Option<&[TrialResult]>,
    points: &[Point],
    cutoffs: &[CutoffEntry],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    if let Some(rows) = rows {
        put(out, "rows.csv", &rows_csv(rows)?, &mut written)?;
    }
    if let Some(controls) = controls {
        put(out, "controls.csv", &rows_csv(controls)?, &mut written)?;
    }
    put(out, "agg.csv", &agg_csv(points)?, &mut written)?;
    put(out, "cutoff.csv", &cutoff_csv(cutoffs)?, &mut written)?;
    for (name, svg) in charts(points) {
        put(out, &name, svg.as_bytes(), &mut written)?;
    }
    Ok(written)
}

pub fn emit_table(out: &Path, table: &SweepTable, cutoffs: &[CutoffEntry]) -> Result<Vec<PathBuf>> {
    emit_report(out, Some(&table.rows), Some(&table.controls), &table.points, cutoffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{aggregate, cutoff_report, Cutoff};
    use gnnfi_core::inject::FaultTarget;
    use gnnfi_core::trial::MitigationKind;

    fn row(model: Arch, ber: f64, trial: u32, acc: f64) -> TrialResult {
        TrialResult {
            key: CurveKey {
                model,
                dataset: "cora".into(),
                target: "act:conv1".parse::<FaultTarget>().unwrap(),
                mitigation: MitigationKind::BitMask,
            },
            ber,
            trial,
            seed: 1234567890123,
            result: Ok(TrialMetrics {
                accuracy: acc,
                bits_flipped: 3,
                nan_count: 1,
                non_nan_count: 2,
            }),
            wall: Duration::from_millis(5),
        }
    }

    fn rows() -> Vec<TrialResult> {
        let mut v = Vec::new();
        for model in [Arch::Gcn, Arch::Gat] {
            for (i, b) in [1e-9, 1e-3, 1e-2].into_iter().enumerate() {
                v.push(row(model, b, 0, 0.5 - 0.1 * i as f64 + 1.0 / 30.0));
            }
        }
        v[5].result = Err("bad, \"quoted\" thing".into());
        v
    }

    #[test]
    fn rows_round_trip() {
        let rs = rows();
        let bytes = rows_csv(&rs).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().next().unwrap(), ROW_HEADER.join(","));
        assert!(text.contains(",1e-9,"));
        let back = parse_rows(&bytes, "rows.csv").unwrap();
        assert_eq!(back, rs);
        // Aggregates recomputed from the file equal the originals exactly.
        assert_eq!(aggregate(&back), aggregate(&rs));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let mut text = String::from_utf8(rows_csv(&rows()).unwrap()).unwrap();
        text = text.replacen("\ngat,", "\nmlp,", 1);
        let err = parse_rows(text.as_bytes(), "r").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        assert!(parse_rows(b"a,b\n", "r").is_err());
    }

    #[test]
    fn emit_is_deterministic() {
        let rs = rows();
        let points = aggregate(&rs);
        let controls: Vec<TrialResult> = rs.iter().filter(|r| r.ber == 1e-9).map(|r| TrialResult { ber: 0.0, ..r.clone() }).collect();
        let cutoffs = cutoff_report(&points, &controls, 0.01).unwrap();
        assert_eq!(cutoffs.len(), 2);
        assert_eq!(cutoffs[0].cutoff, Cutoff::Ber(1e-9));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_report(a.path(), Some(&rs), Some(&controls), &points, &cutoffs).unwrap();
        let fb = emit_report(b.path(), Some(&rs), Some(&controls), &points, &cutoffs).unwrap();
        assert_eq!(fa.len(), 6);
        let svgs = fa.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).count();
        assert_eq!(svgs, 2);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let agg = std::fs::read_to_string(a.path().join("agg.csv")).unwrap();
        assert_eq!(agg.lines().next().unwrap(), AGG_HEADER.join(","));
        // The failed GAT point has no successful trial.
        assert!(agg.lines().last().unwrap().ends_with(",,,0"));
    }
}
