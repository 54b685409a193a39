//! Graph storage, dataset containers and ingestion.
//!
//! Graphs are stored as symmetric CSR without self-loops. The GCN
//! normalization `D̂^{-1/2}(A+I)D̂^{-1/2}` is kept as per-edge weights plus
//! one implicit self-loop weight per node, so `nnz` is always the true
//! directed edge count.

mod cora;
mod data;
mod io;
mod sbm;

pub use cora::{convert_cora_raw, read_cora_raw, ConvertOptions, ConvertSummary, CORA_LABELS};
pub use data::{Dataset, FeatureMatrix, LabelVector, Role, Split};
pub use io::{load_canonical, save_canonical};
pub use sbm::{generate_sbm, SbmParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_weights: Option<Vec<f64>>,
    self_weights: Option<Vec<f64>>,
}

impl Graph {
    /// Builds a symmetrized graph from an edge list. Self-loops and
    /// duplicates (in either direction) are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        index: x,
                        num_nodes,
                        context: "edge list".into(),
                    });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut nbrs in adj {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_indices.extend(nbrs);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            edge_weights: None,
            self_weights: None,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Stored directed entries; twice the undirected edge count.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|u| self.degree(u)).collect()
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    pub fn neighbor_weights(&self, u: usize) -> Option<&[f64]> {
        self.edge_weights
            .as_ref()
            .map(|w| &w[self.row_offsets[u]..self.row_offsets[u + 1]])
    }

    pub fn edge_weights(&self) -> Option<&[f64]> {
        self.edge_weights.as_deref()
    }

    pub fn self_weights(&self) -> Option<&[f64]> {
        self.self_weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.edge_weights.is_some()
    }

    /// Undirected edges `(u, v)` with `u < v`, in CSR order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Populates the symmetric GCN normalization weights.
    pub fn normalize_adjacency(&self) -> Graph {
        let mut weights = Vec::with_capacity(self.nnz());
        for u in 0..self.num_nodes {
            let du = self.degree(u) + 1;
            for &v in self.neighbors(u) {
                weights.push(1.0 / ((du * (self.degree(v) + 1)) as f64).sqrt());
            }
        }
        let self_weights = (0..self.num_nodes)
            .map(|u| 1.0 / (self.degree(u) + 1) as f64)
            .collect();
        Graph {
            edge_weights: Some(weights),
            self_weights: Some(self_weights),
            ..self.clone()
        }
    }

    /// Weighted propagation `Ŵ·X` of a real matrix, self-loops included.
    pub fn propagate(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let (Some(w), Some(ws)) = (&self.edge_weights, &self.self_weights) else {
            return Err(Error::MissingWeights);
        };
        if x.rows() != self.num_nodes {
            return Err(Error::shape("propagate", self.num_nodes, x.rows()));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.num_nodes, d);
        if d == 0 {
            return Ok(out);
        }
        use rayon::prelude::*;
        let kernel = |(u, row): (usize, &mut [f64])| {
            let s = ws[u];
            for (o, xv) in row.iter_mut().zip(x.row(u)) {
                *o = s * *xv;
            }
            for e in self.row_offsets[u]..self.row_offsets[u + 1] {
                let wv = w[e];
                for (o, xv) in row.iter_mut().zip(x.row(self.col_indices[e])) {
                    *o += wv * *xv;
                }
            }
        };
        if self.num_nodes >= 256 {
            out.as_mut_slice()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(kernel);
        } else {
            out.as_mut_slice()
                .chunks_mut(d)
                .enumerate()
                .for_each(kernel);
        }
        Ok(out)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.row_offsets.len() != self.num_nodes + 1 || self.row_offsets[0] != 0 {
            return bad("row_offsets has wrong length or start".into());
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_offsets not non-decreasing".into());
        }
        if self.row_offsets[self.num_nodes] != self.nnz() {
            return bad("row_offsets[N] != nnz".into());
        }
        for u in 0..self.num_nodes {
            let nbrs = self.neighbors(u);
            if nbrs.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {u} unsorted or has duplicates"));
            }
            for &v in nbrs {
                if v >= self.num_nodes {
                    return bad(format!("col index {v} out of range"));
                }
                if v == u {
                    return bad(format!("stored self-loop at {u}"));
                }
                if !self.has_edge(v, u) {
                    return bad(format!("edge ({u},{v}) lacks its reverse"));
                }
            }
        }
        if let Some(w) = &self.edge_weights {
            if w.len() != self.nnz() {
                return bad("edge_weights length != nnz".into());
            }
            for u in 0..self.num_nodes {
                let du = self.degree(u) as f64;
                for (e, &v) in (self.row_offsets[u]..).zip(self.neighbors(u)) {
                    let dv = self.degree(v) as f64;
                    let want = 1.0 / ((du + 1.0) * (dv + 1.0)).sqrt();
                    if !(w[e] > 0.0) || (w[e] - want).abs() > 1e-12 {
                        return bad(format!("weight({u},{v}) = {} != {want}", w[e]));
                    }
                }
            }
        }
        Ok(())
    }
}
