//! Stochastic block model generator for desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, FeatureMatrix, Graph, LabelVector, Role, Split};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SbmParams {
    pub n_per_block: usize,
    pub num_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Feature width; the first `num_blocks` columns carry the block one-hot.
    pub dim: usize,
    /// Amplitude of the uniform `[0, noise)` term added to every feature.
    pub noise: f64,
    pub seed: u64,
}

/// Node `i` belongs to block `i / n_per_block`; block = class label.
/// Each class is split 60/20/20 into train/val/test.
pub fn generate_sbm(p: &SbmParams) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p.p_in) || !(0.0..=1.0).contains(&p.p_out) {
        return Err(Error::Invalid(
            "SBM probabilities must lie in [0, 1]".into(),
        ));
    }
    if p.n_per_block < 2 || p.num_blocks == 0 {
        return Err(Error::Invalid(
            "SBM needs n_per_block >= 2 and at least one block".into(),
        ));
    }
    if p.dim < p.num_blocks {
        return Err(Error::Invalid(format!(
            "feature dim {} smaller than block count {}",
            p.dim, p.num_blocks
        )));
    }
    if !(p.noise >= 0.0) || !p.noise.is_finite() {
        return Err(Error::Invalid(
            "noise amplitude must be finite and >= 0".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.n_per_block * p.num_blocks;
    let block = |u: usize| u / p.n_per_block;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let prob = if block(u) == block(v) {
                p.p_in
            } else {
                p.p_out
            };
            if rng.gen::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let mut x = DenseMatrix::zeros(n, p.dim);
    for u in 0..n {
        let row = x.row_mut(u);
        row[block(u)] = 1.0;
        for v in row.iter_mut() {
            *v += p.noise * rng.gen::<f64>();
        }
    }
    let features = FeatureMatrix::new(x)?;
    let labels = LabelVector::new((0..n).map(block).collect(), p.num_blocks)?;

    let mut split = Split::unused(n);
    for b in 0..p.num_blocks {
        let mut members: Vec<usize> = (b * p.n_per_block..(b + 1) * p.n_per_block).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        let n_train = ((0.6 * m as f64).round() as usize).max(1);
        let n_val = ((0.2 * m as f64).round() as usize).min(m - n_train);
        for (i, &u) in members.iter().enumerate() {
            let role = if i < n_train {
                Role::Train
            } else if i < n_train + n_val {
                Role::Val
            } else {
                Role::Test
            };
            split.set(u, role);
        }
    }
    Dataset::new(graph, features, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SbmParams {
        SbmParams {
            n_per_block: 4,
            num_blocks: 2,
            p_in: 1.0,
            p_out: 0.0,
            dim: 3,
            noise: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn forced_cliques() {
        let ds = generate_sbm(&params()).unwrap();
        assert_eq!(ds.graph.nnz(), 2 * (4 * 3));
        assert!(!ds.graph.has_edge(0, 4));
        ds.graph.validate().unwrap();
    }

    #[test]
    fn deterministic() {
        let a = generate_sbm(&SbmParams {
            p_in: 0.5,
            p_out: 0.2,
            ..params()
        })
        .unwrap();
        let b = generate_sbm(&SbmParams {
            p_in: 0.5,
            p_out: 0.2,
            ..params()
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_per_class_and_covers_classes() {
        let ds = generate_sbm(&SbmParams {
            n_per_block: 10,
            ..params()
        })
        .unwrap();
        assert_eq!(ds.split.count(Role::Train), 12);
        assert_eq!(ds.split.count(Role::Val), 4);
        assert_eq!(ds.split.count(Role::Test), 4);
        ds.validate_split().unwrap();
    }

    #[test]
    fn preconditions() {
        assert!(generate_sbm(&SbmParams {
            p_in: 1.5,
            ..params()
        })
        .is_err());
        assert!(generate_sbm(&SbmParams {
            n_per_block: 1,
            ..params()
        })
        .is_err());
        assert!(generate_sbm(&SbmParams { dim: 1, ..params() }).is_err());
    }

    #[test]
    fn features_carry_block_signature() {
        let ds = generate_sbm(&SbmParams {
            noise: 0.0,
            ..params()
        })
        .unwrap();
        assert_eq!(ds.features.values().row(5), &[0.0, 1.0, 0.0]);
    }
}
