//! Conversion of the raw Cora distribution (`cora.content` / `cora.cites`)
//! into the canonical TSV layout with a seeded semi-supervised split.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{save_canonical, Dataset, FeatureMatrix, Graph, LabelVector, Role, Split};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Cora's seven subject labels; class index = position in this list.
pub const CORA_LABELS: [&str; 7] = [
    "Case_Based",
    "Genetic_Algorithms",
    "Neural_Networks",
    "Probabilistic_Methods",
    "Reinforcement_Learning",
    "Rule_Learning",
    "Theory",
];

#[derive(Clone, Debug)]
pub struct ConvertOptions {
    pub seed: u64,
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub row_normalize: bool,
    /// Label vocabulary. `None` means [`CORA_LABELS`].
    pub labels: Option<Vec<String>>,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            train_per_class: 20,
            num_val: 500,
            num_test: 1000,
            row_normalize: true,
            labels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvertSummary {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub citations: usize,
    pub undirected_edges: usize,
    pub nnz: usize,
    pub dropped_citations: usize,
    pub self_citations: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl fmt::Display for ConvertSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes              {}", self.num_nodes)?;
        writeln!(f, "features           {}", self.num_features)?;
        writeln!(f, "classes            {}", self.num_classes)?;
        writeln!(f, "citation lines     {}", self.citations)?;
        writeln!(f, "undirected edges   {}", self.undirected_edges)?;
        writeln!(f, "nnz (directed)     {}", self.nnz)?;
        writeln!(f, "dropped citations  {}", self.dropped_citations)?;
        writeln!(f, "self citations     {}", self.self_citations)?;
        write!(
            f,
            "split              train {} / val {} / test {}",
            self.train, self.val, self.test
        )
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses the raw files into a dataset without touching the filesystem
/// beyond reading. Returns the dataset and the conversion summary.
pub fn read_cora_raw(
    content_path: &Path,
    cites_path: &Path,
    opts: &ConvertOptions,
) -> Result<(Dataset, ConvertSummary)> {
    let vocab: Vec<String> = match &opts.labels {
        Some(v) => v.clone(),
        None => CORA_LABELS.iter().map(|s| s.to_string()).collect(),
    };
    let label_index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let content = fs::read_to_string(content_path).map_err(|e| Error::io(content_path, e))?;
    let cites = fs::read_to_string(cites_path).map_err(|e| Error::io(cites_path, e))?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err(
                content_path,
                line_no,
                "expected id, features, label",
            ));
        }
        let id = fields[0];
        let label = fields[fields.len() - 1];
        let feats = fields[1..fields.len() - 1]
            .iter()
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| parse_err(content_path, line_no, format!("bad feature {x:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != feats.len() {
                return Err(parse_err(
                    content_path,
                    line_no,
                    format!("expected {} features, found {}", first.len(), feats.len()),
                ));
            }
        }
        let Some(&class) = label_index.get(label) else {
            return Err(Error::UnknownLabel(label.to_string()));
        };
        if ids.insert(id.to_string(), rows.len()).is_some() {
            return Err(Error::DuplicateNodeId(id.to_string()));
        }
        rows.push(feats);
        labels.push(class);
    }
    let n = rows.len();

    let mut edges = Vec::new();
    let mut citations = 0;
    let mut dropped = 0;
    let mut self_citations = 0;
    for (i, line) in cites.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(cites_path, i + 1, "expected cited<TAB>citing"));
        }
        citations += 1;
        match (ids.get(fields[0]), ids.get(fields[1])) {
            (Some(&u), Some(&v)) => {
                if u == v {
                    self_citations += 1;
                }
                edges.push((u, v));
            }
            _ => dropped += 1,
        }
    }

    let graph = Graph::from_edges(n, &edges)?;
    let mut features = FeatureMatrix::new(DenseMatrix::from_rows(&rows)?)?;
    if opts.row_normalize {
        features.row_normalize();
    }
    let labels = LabelVector::new(labels, vocab.len())?;
    let split = planetoid_split(&labels, opts);

    let summary = ConvertSummary {
        num_nodes: n,
        num_features: features.dim(),
        num_classes: vocab.len(),
        citations,
        undirected_edges: graph.nnz() / 2,
        nnz: graph.nnz(),
        dropped_citations: dropped,
        self_citations,
        train: split.count(Role::Train),
        val: split.count(Role::Val),
        test: split.count(Role::Test),
    };
    Ok((Dataset::new(graph, features, labels, split)?, summary))
}

/// `train_per_class` seeded picks per class, then `num_val` and `num_test`
/// from a seeded shuffle of the remaining nodes.
fn planetoid_split(labels: &LabelVector, opts: &ConvertOptions) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = labels.len();
    let mut split = Split::unused(n);
    for c in 0..labels.num_classes() {
        let mut members: Vec<usize> = (0..n).filter(|&u| labels.get(u) == c).collect();
        members.shuffle(&mut rng);
        for &u in members.iter().take(opts.train_per_class) {
            split.set(u, Role::Train);
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&u| split.role(u) == Role::Unused).collect();
    rest.shuffle(&mut rng);
    for (i, &u) in rest.iter().enumerate() {
        if i < opts.num_val {
            split.set(u, Role::Val);
        } else if i < opts.num_val + opts.num_test {
            split.set(u, Role::Test);
        }
    }
    split
}

/// Reads the raw files and writes the canonical directory.
pub fn convert_cora_raw(
    content_path: &Path,
    cites_path: &Path,
    out_dir: &Path,
    opts: &ConvertOptions,
) -> Result<ConvertSummary> {
    let (ds, summary) = read_cora_raw(content_path, cites_path, opts)?;
    save_canonical(&ds, out_dir)?;
    Ok(summary)
}
