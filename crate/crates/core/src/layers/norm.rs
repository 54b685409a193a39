use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    None,
    Batch,
    Stfn,
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(NormKind::None),
            "batch" | "bn" => Ok(NormKind::Batch),
            "stfn" => Ok(NormKind::Stfn),
            _ => Err("none|batch|stfn".into()),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::None => "none",
            NormKind::Batch => "batch",
            NormKind::Stfn => "stfn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub kind: NormKind,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl NormParams {
    pub fn new(kind: NormKind, d: usize) -> Self {
        Self {
            kind,
            gamma: Param::vector(vec![1.0; d]),
            beta: Param::vector(vec![0.0; d]),
            eps: 1e-5,
            momentum: 0.1,
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Learnable entries; zero for `NormKind::None`.
    pub fn num_params(&self) -> usize {
        match self.kind {
            NormKind::None => 0,
            _ => self.gamma.len() + self.beta.len(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self.kind {
            NormKind::None => Vec::new(),
            _ => vec![&mut self.gamma, &mut self.beta],
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self.kind {
            NormKind::None => Vec::new(),
            _ => vec![&self.gamma, &self.beta],
        }
    }
}

/// What a norm backward needs from its forward.
#[derive(Clone, Debug)]
pub struct NormCache {
    /// Normalized values before the affine map, one matrix per step.
    pub xhat: Vec<DenseMatrix>,
    /// `1/√(var + eps)`: per node for STFN, per channel for batch norm.
    pub inv_std: Vec<f64>,
    /// Multiplier on `xhat` ahead of `γ` (`u_th` for STFN, 1 otherwise).
    pub scale: f64,
    /// Statistics came from the batch (false: frozen running stats).
    pub batch_stats: bool,
}

/// Per-node `(mean, population variance)` over all channels and steps.
pub fn stfn_stats(x_steps: &[DenseMatrix]) -> Result<Vec<(f64, f64)>> {
    let first = x_steps
        .first()
        .ok_or_else(|| Error::Invalid("STFN needs at least one step".into()))?;
    let (n, c) = first.shape();
    if let Some(m) = x_steps.iter().find(|m| m.shape() != (n, c)) {
        return Err(Error::shape(
            "stfn",
            format!("{n}x{c}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let count = (c * x_steps.len()) as f64;
    Ok((0..n)
        .map(|u| {
            let mean = x_steps.iter().flat_map(|m| m.row(u)).sum::<f64>() / count;
            let var = x_steps
                .iter()
                .flat_map(|m| m.row(u))
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / count;
            (mean, var)
        })
        .collect())
}

/// Threshold-scaled per-node normalization over channels and steps:
/// `y = u_th·(x − E[x])/√(Var[x] + eps)·γ_c + β_c`.
pub fn stfn_forward(
    x_steps: &[DenseMatrix],
    p: &NormParams,
    u_th: f64,
) -> Result<(Vec<DenseMatrix>, NormCache)> {
    let stats = stfn_stats(x_steps)?;
    let c = x_steps[0].cols();
    if c != p.dim() {
        return Err(Error::shape("stfn gamma", c, p.dim()));
    }
    let inv_std: Vec<f64> = stats
        .iter()
        .map(|&(_, v)| 1.0 / (v + p.eps).sqrt())
        .collect();
    let gamma = p.gamma.value.as_slice();
    let beta = p.beta.value.as_slice();
    let mut xhat = Vec::with_capacity(x_steps.len());
    let mut out = Vec::with_capacity(x_steps.len());
    for x in x_steps {
        let mut h = x.clone();
        let mut y = x.clone();
        for (u, &(mean, _)) in stats.iter().enumerate() {
            for ((hv, yv), ch) in h.row_mut(u).iter_mut().zip(y.row_mut(u)).zip(0..c) {
                *hv = (*hv - mean) * inv_std[u];
                *yv = u_th * *hv * gamma[ch] + beta[ch];
            }
        }
        xhat.push(h);
        out.push(y);
    }
    Ok((
        out,
        NormCache {
            xhat,
            inv_std,
            scale: u_th,
            batch_stats: true,
        },
    ))
}

fn affine_grads(cache: &NormCache, p: &mut NormParams, gy: &[DenseMatrix]) -> Vec<DenseMatrix> {
    let c = p.dim();
    let gamma = p.gamma.value.as_slice().to_vec();
    let mut gxhat = Vec::with_capacity(gy.len());
    for (g, xh) in gy.iter().zip(&cache.xhat) {
        let mut gh = g.clone();
        for u in 0..g.rows() {
            let (gr, xr) = (g.row(u), xh.row(u));
            for ch in 0..c {
                p.gamma.grad.as_mut_slice()[ch] += gr[ch] * cache.scale * xr[ch];
                p.beta.grad.as_mut_slice()[ch] += gr[ch];
            }
            for (v, ch) in gh.row_mut(u).iter_mut().zip(0..c) {
                *v *= cache.scale * gamma[ch];
            }
        }
        gxhat.push(gh);
    }
    gxhat
}

pub fn stfn_backward(
    cache: &NormCache,
    p: &mut NormParams,
    gy: &[DenseMatrix],
) -> Vec<DenseMatrix> {
    let gxhat = affine_grads(cache, p, gy);
    let n = gy.first().map_or(0, DenseMatrix::rows);
    let count = gxhat.iter().map(DenseMatrix::cols).sum::<usize>() as f64;
    let mut gx = gxhat.clone();
    for u in 0..n {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (g, xh) in gxhat.iter().zip(&cache.xhat) {
            for (a, b) in g.row(u).iter().zip(xh.row(u)) {
                m1 += a;
                m2 += a * b;
            }
        }
        m1 /= count;
        m2 /= count;
        for ((out, g), xh) in gx.iter_mut().zip(&gxhat).zip(&cache.xhat) {
            for ((o, a), b) in out.row_mut(u).iter_mut().zip(g.row(u)).zip(xh.row(u)) {
                *o = cache.inv_std[u] * (a - m1 - b * m2);
            }
        }
    }
    gx
}

/// Per-channel normalization over the rows of `x`. In training mode the
/// batch statistics are used and the running statistics updated; in
/// inference mode the running statistics are used and nothing changes.
pub fn batchnorm_forward(
    x: &DenseMatrix,
    p: &mut NormParams,
    training: bool,
) -> Result<(DenseMatrix, NormCache)> {
    let (r, c) = x.shape();
    if c != p.dim() {
        return Err(Error::shape("batchnorm gamma", c, p.dim()));
    }
    let (mean, var) = if training {
        if r < 2 {
            return Err(Error::Invalid(format!(
                "batch norm in training mode needs at least 2 rows, got {r}"
            )));
        }
        let mean: Vec<f64> = x.sum_rows().iter().map(|s| s / r as f64).collect();
        let mut var = vec![0.0; c];
        for i in 0..r {
            for ((v, x), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= r as f64);
        let unbias = r as f64 / (r - 1) as f64;
        for ch in 0..c {
            p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mean[ch];
            p.running_var[ch] =
                (1.0 - p.momentum) * p.running_var[ch] + p.momentum * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (p.running_mean.clone(), p.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let gamma = p.gamma.value.as_slice();
    let beta = p.beta.value.as_slice();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for i in 0..r {
        for (ch, (h, o)) in xhat.row_mut(i).iter_mut().zip(y.row_mut(i)).enumerate() {
            *h = (*h - mean[ch]) * inv_std[ch];
            *o = *h * gamma[ch] + beta[ch];
        }
    }
    Ok((
        y,
        NormCache {
            xhat: vec![xhat],
            inv_std,
            scale: 1.0,
            batch_stats: training,
        },
    ))
}

pub fn batchnorm_backward(cache: &NormCache, p: &mut NormParams, gy: &DenseMatrix) -> DenseMatrix {
    let gxhat = affine_grads(cache, p, std::slice::from_ref(gy)).remove(0);
    let xhat = &cache.xhat[0];
    let (r, c) = gy.shape();
    let mut gx = gxhat.clone();
    if !cache.batch_stats {
        for i in 0..r {
            for (v, s) in gx.row_mut(i).iter_mut().zip(&cache.inv_std) {
                *v *= s;
            }
        }
        return gx;
    }
    let mut m1 = vec![0.0; c];
    let mut m2 = vec![0.0; c];
    for i in 0..r {
        for ch in 0..c {
            m1[ch] += gxhat.get(i, ch);
            m2[ch] += gxhat.get(i, ch) * xhat.get(i, ch);
        }
    }
    for ch in 0..c {
        m1[ch] /= r as f64;
        m2[ch] /= r as f64;
    }
    for i in 0..r {
        for ch in 0..c {
            let v = cache.inv_std[ch] * (gxhat.get(i, ch) - m1[ch] - xhat.get(i, ch) * m2[ch]);
            gx.set(i, ch, v);
        }
    }
    gx
}
