//! Canonical TSV dataset directory.
//!
//! ```text
//! edges.tsv     src<TAB>dst          each undirected edge once, no self-loops
//! features.tsv  d reals per row      row i = node i
//! labels.tsv    one integer per row  row i = node i
//! split.tsv     node<TAB>role        role in {train, val, test}
//! meta.tsv      key<TAB>value        num_nodes, num_features, num_classes
//! ```
//!
//! Blank lines and lines starting with `#` are ignored everywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, FeatureMatrix, Graph, LabelVector, Role, Split};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

struct TsvLines {
    path: PathBuf,
    content: String,
}

impl TsvLines {
    fn open(path: PathBuf) -> Result<Self> {
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, content })
    }

    /// `(1-based line number, fields)` for every data line.
    fn records(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.content
            .lines()
            .enumerate()
            .filter(|(_, l)| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            })
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field
            .trim()
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from {field:?}")))
    }
}

struct Meta {
    num_nodes: Option<usize>,
    num_features: Option<usize>,
    num_classes: Option<usize>,
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let mut meta = Meta {
        num_nodes: None,
        num_features: None,
        num_classes: None,
    };
    let path = dir.join("meta.tsv");
    if !path.exists() {
        return Ok(meta);
    }
    let f = TsvLines::open(path)?;
    for (line, fields) in f.records() {
        if fields.len() != 2 {
            return Err(f.err(line, "expected key<TAB>value"));
        }
        let v: usize = f.parse(line, fields[1], "integer")?;
        match fields[0].trim() {
            "num_nodes" => meta.num_nodes = Some(v),
            "num_features" => meta.num_features = Some(v),
            "num_classes" => meta.num_classes = Some(v),
            other => return Err(f.err(line, format!("unknown meta key {other:?}"))),
        }
    }
    Ok(meta)
}

/// Loads a canonical dataset directory.
pub fn load_canonical(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;

    let feats = TsvLines::open(dir.join("features.tsv"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, fields) in feats.records() {
        let row = fields
            .iter()
            .map(|x| feats.parse::<f64>(line, x, "real"))
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(feats.err(line, "non-finite feature value"));
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(feats.err(
                    line,
                    format!("expected {} features, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let num_nodes = meta.num_nodes.unwrap_or(rows.len());
    if rows.len() != num_nodes {
        return Err(feats.err(
            0,
            format!("{} feature rows but num_nodes = {num_nodes}", rows.len()),
        ));
    }
    if let (Some(d), Some(first)) = (meta.num_features, rows.first()) {
        if first.len() != d {
            return Err(feats.err(1, format!("meta says {d} features, found {}", first.len())));
        }
    }
    let features = FeatureMatrix::new(DenseMatrix::from_rows(&rows)?)?;

    let lab = TsvLines::open(dir.join("labels.tsv"))?;
    let mut labels = Vec::with_capacity(num_nodes);
    for (line, fields) in lab.records() {
        if fields.len() != 1 {
            return Err(lab.err(line, "expected one integer label"));
        }
        labels.push(lab.parse::<usize>(line, fields[0], "label")?);
    }
    if labels.len() != num_nodes {
        return Err(lab.err(
            0,
            format!("{} labels but num_nodes = {num_nodes}", labels.len()),
        ));
    }
    let num_classes = match meta.num_classes {
        Some(c) => c,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    if let Some(pos) = labels.iter().position(|&l| l >= num_classes) {
        return Err(lab.err(pos + 1, format!("label outside [0, {num_classes})")));
    }
    let labels = LabelVector::new(labels, num_classes)?;

    let ed = TsvLines::open(dir.join("edges.tsv"))?;
    let mut edges = Vec::new();
    for (line, fields) in ed.records() {
        if fields.len() != 2 {
            return Err(ed.err(line, "expected src<TAB>dst"));
        }
        let u: usize = ed.parse(line, fields[0], "node index")?;
        let v: usize = ed.parse(line, fields[1], "node index")?;
        for x in [u, v] {
            if x >= num_nodes {
                return Err(Error::NodeOutOfRange {
                    index: x,
                    num_nodes,
                    context: format!("{}:{line}", ed.path.display()),
                });
            }
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(num_nodes, &edges)?;

    let sp = TsvLines::open(dir.join("split.tsv"))?;
    let mut split = Split::unused(num_nodes);
    for (line, fields) in sp.records() {
        if fields.len() != 2 {
            return Err(sp.err(line, "expected node<TAB>role"));
        }
        let u: usize = sp.parse(line, fields[0], "node index")?;
        if u >= num_nodes {
            return Err(Error::UnknownSplitNode(u));
        }
        let role: Role = fields[1]
            .trim()
            .parse()
            .map_err(|m: String| sp.err(line, m))?;
        split.set(u, role);
    }

    Dataset::new(graph, features, labels, split)
}

fn write_file(path: PathBuf, body: &str) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

/// Writes the five canonical TSV files into `dir` (created if needed).
pub fn save_canonical(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut s = String::new();
    for (u, v) in ds.graph.undirected_edges() {
        writeln!(s, "{u}\t{v}").unwrap();
    }
    write_file(dir.join("edges.tsv"), &s)?;

    s.clear();
    let x = ds.features.values();
    for r in 0..x.rows() {
        for (c, v) in x.row(r).iter().enumerate() {
            if c > 0 {
                s.push('\t');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    write_file(dir.join("features.tsv"), &s)?;

    s.clear();
    for l in ds.labels.labels() {
        writeln!(s, "{l}").unwrap();
    }
    write_file(dir.join("labels.tsv"), &s)?;

    s.clear();
    for (u, role) in ds.split.roles().iter().enumerate() {
        if *role != Role::Unused {
            writeln!(s, "{u}\t{role}").unwrap();
        }
    }
    write_file(dir.join("split.tsv"), &s)?;

    s.clear();
    writeln!(s, "num_nodes\t{}", ds.num_nodes()).unwrap();
    writeln!(s, "num_features\t{}", ds.features.dim()).unwrap();
    writeln!(s, "num_classes\t{}", ds.num_classes()).unwrap();
    write_file(dir.join("meta.tsv"), &s)
}
