use super::{linear_backward, pre_linear_forward, LinearParams};
use crate::error::{Error, Result};
use crate::spike::SpikeTrain;
use crate::tensor::DenseMatrix;

/// Mean spike count over `T` per node and channel.
pub fn rate_decode(s: &SpikeTrain) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(s.nodes(), s.channels());
    for t in 0..s.steps() {
        for u in 0..s.nodes() {
            let row = out.row_mut(u);
            for c in s.ones(t, u) {
                row[c] += 1.0;
            }
        }
    }
    out.scale(1.0 / s.steps().max(1) as f64);
    out
}

pub fn rate_decode_steps(steps: &[DenseMatrix]) -> DenseMatrix {
    let (n, d) = steps.first().map_or((0, 0), DenseMatrix::shape);
    let mut out = DenseMatrix::zeros(n, d);
    for m in steps {
        out.add_assign(m);
    }
    out.scale(1.0 / steps.len().max(1) as f64);
    out
}

/// Concatenated decoded rates through the classifier. Returns the logits
/// and the concatenated input (needed by the adjoint).
pub fn readout_forward(
    rates: &[DenseMatrix],
    w: &LinearParams,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let refs: Vec<&DenseMatrix> = rates.iter().collect();
    let concat = DenseMatrix::hstack(&refs)?;
    let logits = pre_linear_forward(&concat, w)?;
    Ok((logits, concat))
}

/// Adjoint of [`readout_forward`]; returns dL/d(rate) per layer.
pub fn readout_backward(
    concat: &DenseMatrix,
    widths: &[usize],
    w: &mut LinearParams,
    g_logits: &DenseMatrix,
) -> Result<Vec<DenseMatrix>> {
    let g = linear_backward(concat, w, g_logits, true)?.expect("requested");
    let mut start = 0;
    Ok(widths
        .iter()
        .map(|&d| {
            let block = g.column_block(start, d);
            start += d;
            block
        })
        .collect())
}

/// Jumping-knowledge readout over every layer's spike train.
pub fn jk_readout(trains: &[&SpikeTrain], w: &LinearParams) -> Result<DenseMatrix> {
    let first = trains
        .first()
        .ok_or_else(|| Error::Invalid("readout needs at least one layer".into()))?;
    for s in trains {
        if s.nodes() != first.nodes() || s.steps() != first.steps() {
            return Err(Error::shape(
                "jk_readout",
                format!("N={} T={}", first.nodes(), first.steps()),
                format!("N={} T={}", s.nodes(), s.steps()),
            ));
        }
    }
    let rates: Vec<DenseMatrix> = trains.iter().map(|s| rate_decode(s)).collect();
    Ok(readout_forward(&rates, w)?.0)
}
