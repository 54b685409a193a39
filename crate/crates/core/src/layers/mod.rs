//! Differentiable layers. Every forward records what its adjoint needs;
//! backward accumulates into the `grad` half of each [`Param`].

mod conv;
mod linear;
mod norm;
mod readout;

pub use conv::{
    ms_route, spiking_conv_backward, spiking_conv_forward, ForwardCtx, LayerGrad, LayerInput,
    LayerTrace, SpikingLayer,
};
pub use linear::{linear_backward, pre_linear_forward, LinearParams};
pub use norm::{
    batchnorm_backward, batchnorm_forward, stfn_backward, stfn_forward, stfn_stats, NormCache,
    NormKind, NormParams,
};
pub use readout::{jk_readout, rate_decode, rate_decode_steps, readout_backward, readout_forward};

use serde::{Deserialize, Serialize};

use crate::tensor::DenseMatrix;

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl Param {
    pub fn new(value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: DenseMatrix::zeros(r, c),
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        let n = v.len();
        Self::new(DenseMatrix::from_vec(1, n, v).expect("length matches"))
    }

    pub fn scalar(v: f64) -> Self {
        Self::vector(vec![v])
    }

    pub fn len(&self) -> usize {
        self.value.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
