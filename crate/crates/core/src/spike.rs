//! Bit-packed spike trains and accumulate-only kernels over them.
//!
//! Bits are laid out as `[t][node][word]` with `ceil(d / 64)` words per
//! node, channel `c` living in bit `c % 64` of word `c / 64`. A node's
//! channel block is therefore contiguous, which is what the neighbor
//! gather loops want. Padding bits past `d` are always zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::DenseMatrix;

const WORD: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeTrain {
    steps: usize,
    nodes: usize,
    channels: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

/// Iterator over set channel indices of one packed row.
pub struct Ones<'a> {
    words: &'a [u64],
    idx: usize,
    cur: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.cur != 0 {
                let b = self.cur.trailing_zeros() as usize;
                self.cur &= self.cur - 1;
                return Some((self.idx - 1) * WORD + b);
            }
            if self.idx >= self.words.len() {
                return None;
            }
            self.cur = self.words[self.idx];
            self.idx += 1;
        }
    }
}

impl SpikeTrain {
    pub fn zeros(steps: usize, nodes: usize, channels: usize) -> Self {
        let words_per_row = channels.div_ceil(WORD);
        Self {
            steps,
            nodes,
            channels,
            words_per_row,
            bits: vec![0; steps * nodes * words_per_row],
        }
    }

    /// Packs one dense 0/1 matrix per step. Any other value is rejected.
    pub fn from_dense(steps: &[DenseMatrix]) -> Result<Self> {
        let (n, d) = steps.first().map_or((0, 0), DenseMatrix::shape);
        let mut s = Self::zeros(steps.len(), n, d);
        for (t, m) in steps.iter().enumerate() {
            if m.shape() != (n, d) {
                return Err(Error::shape(
                    "SpikeTrain::from_dense",
                    format!("{n}x{d}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            s.write_step(t, m)?;
        }
        Ok(s)
    }

    pub fn from_fn(
        steps: usize,
        nodes: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let mut s = Self::zeros(steps, nodes, channels);
        for t in 0..steps {
            for u in 0..nodes {
                for c in 0..channels {
                    if f(t, u, c) {
                        s.set(t, u, c, true);
                    }
                }
            }
        }
        s
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    #[inline]
    fn row_start(&self, t: usize, u: usize) -> usize {
        (t * self.nodes + u) * self.words_per_row
    }

    #[inline]
    pub fn row_words(&self, t: usize, u: usize) -> &[u64] {
        let s = self.row_start(t, u);
        &self.bits[s..s + self.words_per_row]
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, c: usize) -> bool {
        debug_assert!(c < self.channels);
        let w = self.bits[self.row_start(t, u) + c / WORD];
        (w >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, t: usize, u: usize, c: usize, on: bool) {
        assert!(c < self.channels, "channel {c} out of range");
        let i = self.row_start(t, u) + c / WORD;
        let mask = 1u64 << (c % WORD);
        if on {
            self.bits[i] |= mask;
        } else {
            self.bits[i] &= !mask;
        }
    }

    /// Overwrites step `t` from a dense 0/1 matrix.
    pub fn write_step(&mut self, t: usize, m: &DenseMatrix) -> Result<()> {
        if m.shape() != (self.nodes, self.channels) {
            return Err(Error::shape(
                "SpikeTrain::write_step",
                format!("{}x{}", self.nodes, self.channels),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        for u in 0..self.nodes {
            let start = self.row_start(t, u);
            let words = &mut self.bits[start..start + self.words_per_row];
            words.iter_mut().for_each(|w| *w = 0);
            for (c, &v) in m.row(u).iter().enumerate() {
                if v == 1.0 {
                    words[c / WORD] |= 1u64 << (c % WORD);
                } else if v != 0.0 {
                    return Err(Error::Invalid(format!(
                        "spike value {v} at (t={t}, node={u}, ch={c}) is not binary"
                    )));
                }
            }
        }
        debug_assert!(self.padding_is_zero());
        Ok(())
    }

    /// Set channels of `(t, u)` in increasing order.
    pub fn ones(&self, t: usize, u: usize) -> Ones<'_> {
        Ones {
            words: self.row_words(t, u),
            idx: 0,
            cur: 0,
        }
    }

    pub fn step_to_dense(&self, t: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nodes, self.channels);
        for u in 0..self.nodes {
            for c in self.ones(t, u) {
                m.set(u, c, 1.0);
            }
        }
        m
    }

    pub fn to_dense(&self) -> Vec<DenseMatrix> {
        (0..self.steps).map(|t| self.step_to_dense(t)).collect()
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn count_ones_step(&self, t: usize) -> u64 {
        let s = t * self.nodes * self.words_per_row;
        self.bits[s..s + self.nodes * self.words_per_row]
            .iter()
            .map(|w| w.count_ones() as u64)
            .sum()
    }

    /// Spike count per node at step `t`.
    pub fn count_ones_row(&self, t: usize, u: usize) -> u32 {
        self.row_words(t, u).iter().map(|w| w.count_ones()).sum()
    }

    pub fn padding_is_zero(&self) -> bool {
        let tail = self.channels % WORD;
        if tail == 0 || self.words_per_row == 0 {
            return true;
        }
        let mask = !((1u64 << tail) - 1);
        self.bits
            .chunks(self.words_per_row)
            .all(|row| row[self.words_per_row - 1] & mask == 0)
    }
}

/// `popcount / (T·N·d)`; zero for an empty train.
pub fn firing_rate(s: &SpikeTrain) -> f64 {
    let slots = s.steps() * s.nodes() * s.channels();
    if slots == 0 {
        0.0
    } else {
        s.count_ones() as f64 / slots as f64
    }
}

fn check_step(g: &Graph, s: &SpikeTrain, t: usize) -> Result<()> {
    if t >= s.steps() {
        return Err(Error::Invalid(format!(
            "time index {t} out of range (T = {})",
            s.steps()
        )));
    }
    if s.nodes() != g.num_nodes() {
        return Err(Error::shape("aggregation", g.num_nodes(), s.nodes()));
    }
    Ok(())
}

/// `out[u][c] = Σ_{v ∈ N(u)} s_t[v][c]`, counted with integer increments.
pub fn agg_unweighted(g: &Graph, s: &SpikeTrain, t: usize) -> Result<DenseMatrix> {
    check_step(g, s, t)?;
    let d = s.channels();
    let mut out = DenseMatrix::zeros(g.num_nodes(), d);
    if d == 0 {
        return Ok(out);
    }
    let kernel = |(u, row): (usize, &mut [f64])| {
        let mut counts = vec![0u32; d];
        for &v in g.neighbors(u) {
            for c in s.ones(t, v) {
                counts[c] += 1;
            }
        }
        for (o, k) in row.iter_mut().zip(counts) {
            *o = k as f64;
        }
    };
    if g.num_nodes() >= 256 {
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

/// `out[u][c] = w_self(u)·s_t[u][c] + Σ_v w(u,v)·s_t[v][c]`; each set bit
/// gates one addition of a precomputed weight.
pub fn agg_weighted(g: &Graph, s: &SpikeTrain, t: usize) -> Result<DenseMatrix> {
    check_step(g, s, t)?;
    let (Some(_), Some(ws)) = (g.edge_weights(), g.self_weights()) else {
        return Err(Error::MissingWeights);
    };
    let d = s.channels();
    let mut out = DenseMatrix::zeros(g.num_nodes(), d);
    if d == 0 {
        return Ok(out);
    }
    let kernel = |(u, row): (usize, &mut [f64])| {
        let w_self = ws[u];
        for c in s.ones(t, u) {
            row[c] += w_self;
        }
        let wts = g.neighbor_weights(u).expect("checked above");
        for (&v, &w) in g.neighbors(u).iter().zip(wts) {
            for c in s.ones(t, v) {
                row[c] += w;
            }
        }
    };
    if g.num_nodes() >= 256 {
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

/// Spike-side linear map `S_t · W`: sums the rows of `w` selected by the
/// set bits of each node. Accumulate only.
pub fn gather_rows(s: &SpikeTrain, t: usize, w: &DenseMatrix) -> Result<DenseMatrix> {
    if w.rows() != s.channels() {
        return Err(Error::shape("gather_rows", s.channels(), w.rows()));
    }
    let d_out = w.cols();
    let mut out = DenseMatrix::zeros(s.nodes(), d_out);
    if d_out == 0 {
        return Ok(out);
    }
    let kernel = |(u, row): (usize, &mut [f64])| {
        for c in s.ones(t, u) {
            for (o, x) in row.iter_mut().zip(w.row(c)) {
                *o += *x;
            }
        }
    };
    if s.nodes() >= 256 {
        out.as_mut_slice()
            .par_chunks_mut(d_out)
            .enumerate()
            .for_each(kernel);
    } else {
        out.as_mut_slice()
            .chunks_mut(d_out)
            .enumerate()
            .for_each(kernel);
    }
    Ok(out)
}

/// `acc += S_tᵀ · g`, the weight gradient of [`gather_rows`].
pub fn scatter_rows_transposed(
    s: &SpikeTrain,
    t: usize,
    g: &DenseMatrix,
    acc: &mut DenseMatrix,
) -> Result<()> {
    if g.rows() != s.nodes() || acc.rows() != s.channels() || acc.cols() != g.cols() {
        return Err(Error::shape(
            "scatter_rows_transposed",
            format!("{}x{} accumulator", s.channels(), g.cols()),
            format!("{}x{}", acc.rows(), acc.cols()),
        ));
    }
    for u in 0..s.nodes() {
        let gr = g.row(u);
        for c in s.ones(t, u) {
            for (a, x) in acc.row_mut(c).iter_mut().zip(gr) {
                *a += *x;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_hand_count() {
        let s = SpikeTrain::from_fn(1, 3, 1, |_, u, _| u != 1);
        let out = agg_unweighted(&path(), &s, 0).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn zeros_annihilate() {
        let s = SpikeTrain::zeros(2, 3, 70);
        let g = path().normalize_adjacency();
        assert_eq!(agg_unweighted(&g, &s, 1).unwrap().max_abs(), 0.0);
        assert_eq!(agg_weighted(&g, &s, 1).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn weighted_closed_forms() {
        let g = Graph::from_edges(3, &[(0, 1)])
            .unwrap()
            .normalize_adjacency();
        let s = SpikeTrain::from_fn(1, 3, 1, |_, _, _| true);
        let out = agg_weighted(&g, &s, 0).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn weighted_requires_weights_and_valid_step() {
        let s = SpikeTrain::zeros(1, 3, 1);
        assert!(matches!(
            agg_weighted(&path(), &s, 0),
            Err(Error::MissingWeights)
        ));
        assert!(agg_unweighted(&path(), &s, 1).is_err());
    }

    #[test]
    fn firing_rate_examples() {
        assert_eq!(
            firing_rate(&SpikeTrain::from_fn(2, 3, 5, |_, _, _| true)),
            1.0
        );
        assert_eq!(firing_rate(&SpikeTrain::zeros(2, 3, 5)), 0.0);
        let mut k = 0;
        let s = SpikeTrain::from_fn(2, 2, 2, |_, _, _| {
            k += 1;
            k <= 3
        });
        assert_eq!(firing_rate(&s), 3.0 / 8.0);
    }

    #[test]
    fn non_binary_rejected() {
        let m = DenseMatrix::filled(1, 1, 0.5);
        assert!(SpikeTrain::from_dense(&[m]).is_err());
    }

    #[test]
    fn gather_matches_dense_product() {
        let s = SpikeTrain::from_fn(1, 4, 3, |_, u, c| (u + c) % 2 == 0);
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let want = s.step_to_dense(0).matmul(&w).unwrap();
        assert_eq!(gather_rows(&s, 0, &w).unwrap(), want);
        let g = DenseMatrix::from_rows(&vec![vec![1.0, 0.0]; 4]).unwrap();
        let mut acc = DenseMatrix::zeros(3, 2);
        scatter_rows_transposed(&s, 0, &g, &mut acc).unwrap();
        assert_eq!(acc, s.step_to_dense(0).transpose_matmul(&g).unwrap());
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(
            t in 1usize..3, n in 1usize..5, d in 1usize..150, seed in any::<u64>()
        ) {
            let mut x = seed | 1;
            let s = SpikeTrain::from_fn(t, n, d, |_, _, _| {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                x & 3 == 0
            });
            prop_assert!(s.padding_is_zero());
            let dense = s.to_dense();
            let back = SpikeTrain::from_dense(&dense).unwrap();
            prop_assert_eq!(&back, &s);
            let naive: f64 = dense.iter().flat_map(|m| m.as_slice().iter()).sum();
            prop_assert_eq!(naive as u64, s.count_ones());
            let slots = (t * n * d) as f64;
            prop_assert!((firing_rate(&s) - naive / slots).abs() < 1e-15);
        }
    }
}
