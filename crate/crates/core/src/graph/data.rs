use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Node features, one row per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix(DenseMatrix);

impl FeatureMatrix {
    pub fn new(values: DenseMatrix) -> Result<Self> {
        values.check_finite("feature matrix")?;
        Ok(Self(values))
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    /// Scales each nonzero row to sum to one. All-zero rows are left alone.
    pub fn row_normalize(&mut self) {
        for r in 0..self.0.rows() {
            let row = self.0.row_mut(r);
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Train,
    Val,
    Test,
    Unused,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
            Role::Unused => "unused",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(format!("unknown role {other:?} (expected train|val|test)")),
        }
    }
}

/// One role per node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    roles: Vec<Role>,
}

impl Split {
    pub fn new(roles: Vec<Role>) -> Self {
        Self { roles }
    }

    pub fn unused(num_nodes: usize) -> Self {
        Self {
            roles: vec![Role::Unused; num_nodes],
        }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, node: usize) -> Role {
        self.roles[node]
    }

    pub fn set(&mut self, node: usize, role: Role) {
        self.roles[node] = role;
    }

    pub fn nodes(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|r| **r == role).count()
    }
}

/// A node-classification dataset: graph, features, labels and split, all
/// indexed by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: FeatureMatrix,
        labels: LabelVector,
        split: Split,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        for (what, len) in [
            ("features", features.num_nodes()),
            ("labels", labels.len()),
            ("split", split.roles().len()),
        ] {
            if len != n {
                return Err(Error::Invalid(format!(
                    "{what} has {len} rows but graph has {n} nodes"
                )));
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Train split non-empty and covering every class.
    pub fn validate_split(&self) -> Result<()> {
        let train = self.split.nodes(Role::Train);
        if train.is_empty() {
            return Err(Error::Invalid("train split is empty".into()));
        }
        let mut seen = vec![false; self.num_classes()];
        for u in train {
            seen[self.labels.get(u)] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!(
                "class {c} has no node in the train split"
            )));
        }
        Ok(())
    }
}
