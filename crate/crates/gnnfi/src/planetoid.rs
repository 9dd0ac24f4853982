//! Planetoid citation datasets: a `.content` file of
//! `<node-id> <features...> <label>` lines and a `.cites` file of
//! `<cited-id> <citing-id>` lines, both tab-separated.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use gnnfi_core::graph::{standard_split, Graph, LabeledSplit, SplitScheme};
use gnnfi_core::tensor::Matrix;

use crate::error::{read_to_string, write, Error, Result};

/// A parsed Planetoid dataset before any split or normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Planetoid {
    pub node_ids: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Label strings in first-appearance order; index = class.
    pub class_names: Vec<String>,
    pub graph: Graph,
    /// Lines in the cites file.
    pub cite_lines: usize,
    /// Cites naming an id that is not in the content file.
    pub dropped_cites: usize,
    /// Cites of a paper by itself.
    pub self_cites: usize,
}

impl Planetoid {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The standard split: 20 training nodes per class, 500 validation and
    /// 1000 test nodes.
    pub fn standard_split(&self) -> Result<LabeledSplit> {
        Ok(standard_split(&self.labels, self.num_classes(), SplitScheme::PLANETOID)?)
    }
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(['\t', ' ']).filter(|s| !s.is_empty())
}

/// Parses the two files' contents. `content_name` and `cites_name` label errors.
pub fn parse_planetoid(content: &str, cites: &str, content_name: &str, cites_name: &str) -> Result<Planetoid> {
    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;

    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = fields(line).collect();
        if parts.len() < 3 {
            return Err(Error::parse(
                content_name,
                lineno,
                format!("expected `<id> <features...> <label>`, found {} fields", parts.len()),
            ));
        }
        let id = parts[0];
        let label = parts[parts.len() - 1];
        let feats = &parts[1..parts.len() - 1];
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::format(
                    content_name,
                    format!("line {lineno} has {} features, earlier lines have {w}", feats.len()),
                ))
            }
            _ => {}
        }
        for f in feats {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::parse(content_name, lineno, format!("feature `{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(content_name, lineno, format!("feature `{f}` is not finite")));
            }
            data.push(v);
        }
        if index.insert(id.to_string(), node_ids.len()).is_some() {
            return Err(Error::parse(content_name, lineno, format!("node id `{id}` appears twice")));
        }
        node_ids.push(id.to_string());
        let class = match class_names.iter().position(|c| c == label) {
            Some(c) => c,
            None => {
                class_names.push(label.to_string());
                class_names.len() - 1
            }
        };
        labels.push(class);
    }
    let Some(width) = width else {
        return Err(Error::format(content_name, "no nodes"));
    };
    let n = node_ids.len();
    let features = Matrix::new(n, width, data)?;

    let mut edges = Vec::new();
    let mut cite_lines = 0;
    let mut dropped_cites = 0;
    let mut self_cites = 0;
    for (i, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = fields(line).collect();
        if parts.len() != 2 {
            return Err(Error::parse(
                cites_name,
                i + 1,
                format!("expected `<cited-id> <citing-id>`, found {} fields", parts.len()),
            ));
        }
        cite_lines += 1;
        match (index.get(parts[0]), index.get(parts[1])) {
            (Some(&u), Some(&v)) => {
                if u == v {
                    self_cites += 1;
                } else {
                    edges.push((u, v));
                }
            }
            _ => dropped_cites += 1,
        }
    }
    if cite_lines == 0 {
        return Err(Error::format(cites_name, "no citation lines"));
    }
    let graph = Graph::from_edges(n, edges)?;
    Ok(Planetoid {
        node_ids,
        features,
        labels,
        class_names,
        graph,
        cite_lines,
        dropped_cites,
        self_cites,
    })
}

pub fn read_planetoid(content_path: &Path, cites_path: &Path) -> Result<Planetoid> {
    let content = read_to_string(content_path)?;
    let cites = read_to_string(cites_path)?;
    let p = parse_planetoid(
        &content,
        &cites,
        &content_path.display().to_string(),
        &cites_path.display().to_string(),
    )?;
    if p.dropped_cites > 0 {
        log::warn!(
            "{}: dropped {} citations naming unknown papers",
            cites_path.display(),
            p.dropped_cites
        );
    }
    Ok(p)
}

/// Loads a dataset with the standard split assigned.
pub fn load_planetoid(content_path: &Path, cites_path: &Path) -> Result<(Graph, Matrix, LabeledSplit)> {
    let p = read_planetoid(content_path, cites_path)?;
    let split = p.standard_split()?;
    Ok((p.graph, p.features, split))
}

/// Renders the dataset in Planetoid format; each undirected edge is written once.
pub fn render_planetoid(p: &Planetoid) -> (String, String) {
    let mut content = String::new();
    for (i, id) in p.node_ids.iter().enumerate() {
        content.push_str(id);
        for v in p.features.row(i) {
            let _ = write!(content, "\t{v}");
        }
        let _ = writeln!(content, "\t{}", p.class_names[p.labels[i]]);
    }
    let mut cites = String::new();
    for (u, v) in p.graph.edges() {
        let _ = writeln!(cites, "{}\t{}", p.node_ids[u], p.node_ids[v]);
    }
    (content, cites)
}

pub fn write_planetoid(p: &Planetoid, content_path: &Path, cites_path: &Path) -> Result<()> {
    let (content, cites) = render_planetoid(p);
    write(content_path, content)?;
    write(cites_path, cites)
}
