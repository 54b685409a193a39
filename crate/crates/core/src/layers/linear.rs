use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// `[d_in, d_out]`.
    pub weight: Param,
    /// `[1, d_out]`.
    pub bias: Option<Param>,
}

impl LinearParams {
    pub fn new(weight: DenseMatrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.cols() {
                return Err(Error::shape("LinearParams bias", weight.cols(), b.len()));
            }
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: bias.map(Param::vector),
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + d_out).max(1) as f64).sqrt();
        let w = (0..d_in * d_out).map(|_| rng.gen_range(-a..=a)).collect();
        Self {
            weight: Param::new(DenseMatrix::from_vec(d_in, d_out, w).expect("sized")),
            bias: bias.then(|| Param::vector(vec![0.0; d_out])),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    pub fn bias_slice(&self) -> Option<&[f64]> {
        self.bias.as_ref().map(|b| b.value.as_slice())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }
}

/// `x·W + b`, applied once to the full-precision input.
pub fn pre_linear_forward(x: &DenseMatrix, p: &LinearParams) -> Result<DenseMatrix> {
    if x.cols() != p.d_in() {
        return Err(Error::shape("pre_linear_forward", p.d_in(), x.cols()));
    }
    let mut out = x.matmul(&p.weight.value)?;
    if let Some(b) = p.bias_slice() {
        out.add_row_vector(b);
    }
    Ok(out)
}

/// Accumulates `dW += xᵀ·gy`, `db += Σ gy`; returns `gy·Wᵀ` when asked.
pub fn linear_backward(
    x: &DenseMatrix,
    p: &mut LinearParams,
    gy: &DenseMatrix,
    need_input_grad: bool,
) -> Result<Option<DenseMatrix>> {
    let gw = x.transpose_matmul(gy)?;
    p.weight.grad.add_assign(&gw);
    if let Some(b) = p.bias.as_mut() {
        for (g, s) in b.grad.as_mut_slice().iter_mut().zip(gy.sum_rows()) {
            *g += s;
        }
    }
    if need_input_grad {
        Ok(Some(gy.matmul_transposed(&p.weight.value)?))
    } else {
        Ok(None)
    }
}
