//! Dataset names and where they come from.
//!
//! `cora`, `citeseer` and `pubmed` are read from `<dir>/<name>.content` and
//! `<dir>/<name>.cites`, where `<dir>` is `--data-dir` or `$GNNFI_DATA`.
//! `synthetic` and `synthetic:nodes=..:degree=..:features=..:classes=..:seed=..`
//! generate a planted-partition graph instead. Parameters may also be
//! separated by commas, but the printed form uses colons so names survive
//! comma-separated lists and CSV columns.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gnnfi_core::graph::{row_normalize, Dataset};
use gnnfi_core::synthetic::{synthetic_graph, SyntheticSpec};

use crate::error::{Error, Result};
use crate::planetoid::read_planetoid;

pub const DATA_ENV: &str = "GNNFI_DATA";

pub const PLANETOID: [&str; 3] = ["cora", "citeseer", "pubmed"];

/// Node, feature and class counts of the three citation graphs.
pub fn planetoid_dims(name: &str) -> Option<(usize, usize, usize)> {
    match name {
        "cora" => Some((2708, 1433, 7)),
        "citeseer" => Some((3327, 3703, 6)),
        "pubmed" => Some((19717, 500, 3)),
        _ => None,
    }
}

pub const DEFAULT_SYNTHETIC: SyntheticSpec = SyntheticSpec {
    seed: 0,
    nodes: 600,
    avg_degree: 4.0,
    num_features: 64,
    num_classes: 4,
};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetName {
    Planetoid(&'static str),
    Synthetic(SyntheticSpec),
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        if let Some(name) = PLANETOID.iter().find(|&&n| n == lower) {
            return Ok(DatasetName::Planetoid(name));
        }
        let Some(rest) = lower.strip_prefix("synthetic") else {
            return Err(format!(
                "unknown dataset `{s}` (expected cora, citeseer, pubmed or synthetic[:key=value...])"
            ));
        };
        let mut spec = DEFAULT_SYNTHETIC;
        let rest = match rest.strip_prefix(':') {
            Some(r) => r,
            None if rest.is_empty() => return Ok(DatasetName::Synthetic(spec)),
            None => return Err(format!("unknown dataset `{s}`")),
        };
        for part in rest.split([',', ':']).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("`{part}` in `{s}` is not key=value"))?;
            let bad = || format!("bad value `{v}` for `{k}` in `{s}`");
            match k {
                "nodes" | "n" => spec.nodes = v.parse().map_err(|_| bad())?,
                "degree" | "deg" => spec.avg_degree = v.parse().map_err(|_| bad())?,
                "features" | "f" => spec.num_features = v.parse().map_err(|_| bad())?,
                "classes" | "c" => spec.num_classes = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(format!("unknown synthetic parameter `{k}` in `{s}`")),
            }
        }
        Ok(DatasetName::Synthetic(spec))
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetName::Planetoid(name) => f.write_str(name),
            DatasetName::Synthetic(s) if *s == DEFAULT_SYNTHETIC => f.write_str("synthetic"),
            DatasetName::Synthetic(s) => write!(
                f,
                "synthetic:nodes={}:degree={}:features={}:classes={}:seed={}",
                s.nodes, s.avg_degree, s.num_features, s.num_classes, s.seed
            ),
        }
    }
}

/// The directory holding Planetoid files: the explicit one, else `$GNNFI_DATA`.
pub fn data_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Paths of the `.content` and `.cites` files of a Planetoid dataset.
pub fn planetoid_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.content")), dir.join(format!("{name}.cites")))
}

/// True when both files of `name` exist under the resolved data directory.
pub fn planetoid_available(name: &str, explicit: Option<&Path>) -> bool {
    data_dir(explicit).is_some_and(|dir| {
        let (content, cites) = planetoid_paths(&dir, name);
        content.is_file() && cites.is_file()
    })
}

/// Loads a dataset by name with row-normalized features.
pub fn load_dataset(name: &DatasetName, explicit_dir: Option<&Path>) -> Result<Dataset> {
    let label = name.to_string();
    let (graph, mut features, split) = match name {
        DatasetName::Planetoid(n) => {
            let dir = data_dir(explicit_dir).ok_or_else(|| {
                Error::format(
                    *n,
                    format!("no data directory; pass --data-dir or set {DATA_ENV} to a directory holding {n}.content and {n}.cites"),
                )
            })?;
            let (content, cites) = planetoid_paths(&dir, n);
            let p = read_planetoid(&content, &cites)?;
            let split = p.standard_split()?;
            log::info!(
                "{n}: {} nodes, {} edges, {} features, {} classes",
                p.graph.num_nodes(),
                p.graph.num_edges(),
                p.features.cols(),
                p.num_classes()
            );
            (p.graph, p.features, split)
        }
        DatasetName::Synthetic(spec) => synthetic_graph(*spec)?,
    };
    row_normalize(&mut features);
    Ok(Dataset::new(label, graph, features, split)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_and_print() {
        assert_eq!("Cora".parse::<DatasetName>().unwrap(), DatasetName::Planetoid("cora"));
        assert_eq!("synthetic".parse::<DatasetName>().unwrap().to_string(), "synthetic");
        let custom: DatasetName = "synthetic:nodes=50,c=3,seed=9".parse().unwrap();
        let DatasetName::Synthetic(spec) = &custom else { panic!() };
        assert_eq!((spec.nodes, spec.num_classes, spec.seed), (50, 3, 9));
        assert_eq!(custom.to_string().parse::<DatasetName>().unwrap(), custom);
        assert!(!custom.to_string().contains(','));
        assert_eq!("synthetic:n=50:c=3:seed=9".parse::<DatasetName>().unwrap(), custom);
        for bad in ["imagenet", "synthetic:nodes", "synthetic:x=1", "synthetic:nodes=q", "syntheticx"] {
            assert!(bad.parse::<DatasetName>().is_err(), "{bad}");
        }
    }

    #[test]
    fn synthetic_loads_normalized() {
        let ds = load_dataset(&"synthetic:nodes=80,features=12,classes=2".parse().unwrap(), None).unwrap();
        assert_eq!((ds.num_nodes(), ds.num_features(), ds.num_classes()), (80, 12, 2));
        for i in 0..ds.num_nodes() {
            let sum: f32 = ds.features.row(i).iter().sum();
            assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn planetoid_reads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = String::new();
        let mut cites = String::new();
        for i in 0..90 {
            content.push_str(&format!("n{i}\t{}\t{}\tc{}\n", i % 2, (i / 2) % 2, i % 3));
            cites.push_str(&format!("n{i}\tn{}\n", (i + 1) % 90));
        }
        std::fs::write(dir.path().join("cora.content"), content).unwrap();
        std::fs::write(dir.path().join("cora.cites"), cites).unwrap();
        assert!(planetoid_available("cora", Some(dir.path())));
        let ds = load_dataset(&DatasetName::Planetoid("cora"), Some(dir.path())).unwrap();
        assert_eq!((ds.num_nodes(), ds.num_classes(), ds.graph().num_edges()), (90, 3, 90));
        assert!(!planetoid_available("pubmed", Some(dir.path())));
        assert!(load_dataset(&DatasetName::Planetoid("pubmed"), Some(dir.path())).is_err());
    }
}
