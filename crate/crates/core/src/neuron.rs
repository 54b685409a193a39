//! Leaky integrate-and-fire dynamics with surrogate gradients.
//!
//! Forward-Euler update of the RC membrane, followed by an inclusive
//! threshold and a hard reset:
//!
//! ```text
//! H_t = U_{t-1} + k·(I_t − (U_{t-1} − u_reset))     k = 1/τ
//! S_t = Θ(H_t − u_th)                               Θ(0) = 1
//! U_t = H_t ⊙ (1 − S_t) + u_reset·S_t
//! ```
//!
//! For PLIF the decay `k` is `sigmoid(a)` with one learnable `a` per layer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronKind {
    Lif,
    Plif,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surrogate {
    /// `α / (2·(1 + (π·α·v/2)²))`
    ArcTan,
    /// `max(0, 1 − |v|/γ) / γ`
    Triangle,
}

impl std::str::FromStr for NeuronKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lif" => Ok(NeuronKind::Lif),
            "plif" => Ok(NeuronKind::Plif),
            _ => Err("lif|plif".into()),
        }
    }
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeuronKind::Lif => "lif",
            NeuronKind::Plif => "plif",
        })
    }
}

impl std::str::FromStr for Surrogate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "arctan" => Ok(Surrogate::ArcTan),
            "triangle" => Ok(Surrogate::Triangle),
            _ => Err("arctan|triangle".into()),
        }
    }
}

impl std::fmt::Display for Surrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Surrogate::ArcTan => "arctan",
            Surrogate::Triangle => "triangle",
        })
    }
}

/// How spikes are produced in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeFn {
    #[default]
    Heaviside,
    /// The surrogate's primitive replaces Θ, making the whole network
    /// differentiable. Only used to validate gradients.
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau: f64,
    pub u_th: f64,
    pub u_reset: f64,
    pub kind: NeuronKind,
    pub plif_raw: f64,
    pub surrogate: Surrogate,
    pub surrogate_alpha: f64,
    pub detach_reset: bool,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            u_th: 1.0,
            u_reset: 0.0,
            kind: NeuronKind::Lif,
            plif_raw: 0.0,
            surrogate: Surrogate::ArcTan,
            surrogate_alpha: 2.0,
            detach_reset: true,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl NeuronParams {
    pub fn lif(tau: f64, u_th: f64) -> Self {
        Self {
            tau,
            u_th,
            ..Self::default()
        }
    }

    /// PLIF whose initial decay equals `1/tau`.
    pub fn plif(tau: f64, u_th: f64) -> Self {
        Self {
            tau,
            u_th,
            kind: NeuronKind::Plif,
            plif_raw: plif_raw_for_tau(tau),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NeuronKind::Lif if !(self.tau >= 1.0) => {
                return Err(Error::Invalid(format!(
                    "tau must be >= 1, got {}",
                    self.tau
                )))
            }
            _ => {}
        }
        if !(self.u_th > self.u_reset) {
            return Err(Error::Invalid(format!(
                "u_th ({}) must exceed u_reset ({})",
                self.u_th, self.u_reset
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::Invalid("surrogate_alpha must be > 0".into()));
        }
        Ok(())
    }

    /// Effective `1/τ`.
    #[inline]
    pub fn decay(&self) -> f64 {
        match self.kind {
            NeuronKind::Lif => 1.0 / self.tau,
            NeuronKind::Plif => sigmoid(self.plif_raw),
        }
    }
}

/// `a` such that `sigmoid(a) = 1/tau`.
pub fn plif_raw_for_tau(tau: f64) -> f64 {
    -(tau - 1.0).ln()
}

/// Learnable PLIF decay, `sigmoid(plif_raw)`.
pub fn plif_decay(p: &NeuronParams) -> Result<f64> {
    match p.kind {
        NeuronKind::Plif => Ok(sigmoid(p.plif_raw)),
        NeuronKind::Lif => Err(Error::Invalid("plif_decay called on a LIF neuron".into())),
    }
}

/// Surrogate derivative of Θ at margin `v = u − u_th`.
#[inline]
pub fn surrogate_grad(v: f64, p: &NeuronParams) -> f64 {
    let a = p.surrogate_alpha;
    match p.surrogate {
        Surrogate::ArcTan => {
            let z = PI * a * v / 2.0;
            a / (2.0 * (1.0 + z * z))
        }
        Surrogate::Triangle => (1.0 - v.abs() / a).max(0.0) / a,
    }
}

/// Primitive of [`surrogate_grad`], rising from 0 to 1.
#[inline]
pub fn surrogate_primitive(v: f64, p: &NeuronParams) -> f64 {
    let a = p.surrogate_alpha;
    match p.surrogate {
        Surrogate::ArcTan => (PI * a * v / 2.0).atan() / PI + 0.5,
        Surrogate::Triangle => {
            if v <= -a {
                0.0
            } else if v >= a {
                1.0
            } else if v < 0.0 {
                (v + a) * (v + a) / (2.0 * a * a)
            } else {
                1.0 - (a - v) * (a - v) / (2.0 * a * a)
            }
        }
    }
}

#[inline]
fn spike_value(v: f64, p: &NeuronParams, f: SpikeFn) -> f64 {
    match f {
        SpikeFn::Heaviside => {
            if v >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        SpikeFn::Smooth => surrogate_primitive(v, p),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub u: DenseMatrix,
}

impl NeuronState {
    pub fn resting(rows: usize, cols: usize, p: &NeuronParams) -> Self {
        Self {
            u: DenseMatrix::filled(rows, cols, p.u_reset),
        }
    }
}

/// One Euler step of the membrane.
pub fn integrate(
    state: &NeuronState,
    input: &DenseMatrix,
    p: &NeuronParams,
) -> Result<NeuronState> {
    if state.u.shape() != input.shape() {
        return Err(Error::shape(
            "integrate",
            format!("{:?}", state.u.shape()),
            format!("{:?}", input.shape()),
        ));
    }
    let k = p.decay();
    let mut u = state.u.clone();
    for (x, i) in u.as_mut_slice().iter_mut().zip(input.as_slice()) {
        *x = charge(*x, *i, k, p.u_reset);
    }
    Ok(NeuronState { u })
}

/// One Euler step of the membrane. With `k = 1` the history drops out and
/// the result is exactly `I + u_reset`.
#[inline]
fn charge(u: f64, i: f64, k: f64, u_reset: f64) -> f64 {
    if k == 1.0 {
        i + u_reset
    } else {
        u + k * (i - (u - u_reset))
    }
}

/// Threshold (inclusive) and hard reset.
pub fn fire(state: &NeuronState, p: &NeuronParams) -> (DenseMatrix, NeuronState) {
    let mut spikes = DenseMatrix::zeros(state.u.rows(), state.u.cols());
    let mut u = state.u.clone();
    for ((s, x), h) in spikes
        .as_mut_slice()
        .iter_mut()
        .zip(u.as_mut_slice())
        .zip(state.u.as_slice())
    {
        *s = spike_value(*h - p.u_th, p, SpikeFn::Heaviside);
        *x = *h * (1.0 - *s) + p.u_reset * *s;
    }
    (spikes, NeuronState { u })
}

/// Per-step record of a neuron population run over `T` steps.
#[derive(Clone, Debug)]
pub struct NeuronRun {
    /// Membrane after integrate, before reset (`H_t`).
    pub pre_reset: Vec<DenseMatrix>,
    /// Emitted spikes; real-valued only under [`SpikeFn::Smooth`].
    pub spikes: Vec<DenseMatrix>,
}

/// Runs the population over all steps of `currents`, starting at rest.
pub fn run(currents: &[DenseMatrix], p: &NeuronParams, f: SpikeFn) -> NeuronRun {
    let (n, d) = currents.first().map_or((0, 0), DenseMatrix::shape);
    let k = p.decay();
    let mut u = vec![p.u_reset; n * d];
    let mut pre_reset = Vec::with_capacity(currents.len());
    let mut spikes = Vec::with_capacity(currents.len());
    for i in currents {
        let mut h = DenseMatrix::zeros(n, d);
        let mut s = DenseMatrix::zeros(n, d);
        for (((uu, ii), hh), ss) in u
            .iter_mut()
            .zip(i.as_slice())
            .zip(h.as_mut_slice())
            .zip(s.as_mut_slice())
        {
            *hh = charge(*uu, *ii, k, p.u_reset);
            *ss = spike_value(*hh - p.u_th, p, f);
            *uu = *hh * (1.0 - *ss) + p.u_reset * *ss;
        }
        pre_reset.push(h);
        spikes.push(s);
    }
    NeuronRun { pre_reset, spikes }
}

/// Gradients of a [`run`].
pub struct NeuronGrad {
    pub currents: Vec<DenseMatrix>,
    /// dL/dk where k is the decay `1/τ`.
    pub decay: f64,
}

/// Backpropagation through time over a recorded run. `grad_spikes[t]` is
/// dL/dS_t from downstream consumers.
pub fn backward(
    currents: &[DenseMatrix],
    run: &NeuronRun,
    grad_spikes: &[DenseMatrix],
    p: &NeuronParams,
) -> NeuronGrad {
    let steps = currents.len();
    let (n, d) = currents.first().map_or((0, 0), DenseMatrix::shape);
    let k = p.decay();
    let ur = p.u_reset;
    let mut g_u = vec![0.0; n * d];
    let mut g_k = 0.0;
    let mut g_currents = vec![DenseMatrix::zeros(n, d); steps];
    for t in (0..steps).rev() {
        let h = run.pre_reset[t].as_slice();
        let s = run.spikes[t].as_slice();
        let gs = grad_spikes[t].as_slice();
        let cur = currents[t].as_slice();
        let prev = (t > 0).then(|| {
            (
                run.pre_reset[t - 1].as_slice(),
                run.spikes[t - 1].as_slice(),
            )
        });
        let gi = g_currents[t].as_mut_slice();
        for j in 0..n * d {
            let sg = surrogate_grad(h[j] - p.u_th, p);
            let mut du_dh = 1.0 - s[j];
            if !p.detach_reset {
                du_dh += (ur - h[j]) * sg;
            }
            let gh = gs[j] * sg + g_u[j] * du_dh;
            gi[j] = k * gh;
            let u_prev = match prev {
                Some((hp, sp)) => hp[j] * (1.0 - sp[j]) + ur * sp[j],
                None => ur,
            };
            g_k += gh * (cur[j] - u_prev + ur);
            g_u[j] = (1.0 - k) * gh;
        }
    }
    NeuronGrad {
        currents: g_currents,
        decay: g_k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> DenseMatrix {
        DenseMatrix::filled(1, 1, v)
    }

    fn p0(tau: f64) -> NeuronParams {
        NeuronParams::lif(tau, 1.0)
    }

    #[test]
    fn integrate_examples() {
        let s = NeuronState::resting(1, 1, &p0(2.0));
        assert_eq!(integrate(&s, &one(1.0), &p0(2.0)).unwrap().u.get(0, 0), 0.5);

        let s = NeuronState { u: one(0.7) };
        assert_eq!(integrate(&s, &one(0.7), &p0(3.0)).unwrap().u.get(0, 0), 0.7);

        let s = NeuronState { u: one(0.3) };
        let u = integrate(&s, &one(5.0), &p0(1e9)).unwrap().u.get(0, 0);
        assert!((u - 0.3).abs() < 1e-8);

        assert!(integrate(&s, &DenseMatrix::zeros(2, 1), &p0(2.0)).is_err());
    }

    #[test]
    fn fire_examples() {
        let p = p0(2.0);
        let (s, st) = fire(&NeuronState { u: one(1.0) }, &p);
        assert_eq!((s.get(0, 0), st.u.get(0, 0)), (1.0, 0.0));
        let below = 1.0 - 1e-12;
        let (s, st) = fire(&NeuronState { u: one(below) }, &p);
        assert_eq!((s.get(0, 0), st.u.get(0, 0)), (0.0, below));
        let (s, st) = fire(&NeuronState { u: one(2.0) }, &p);
        assert_eq!((s.get(0, 0), st.u.get(0, 0)), (1.0, 0.0));
    }

    #[test]
    fn surrogate_examples() {
        let p = NeuronParams::default();
        assert_eq!(surrogate_grad(0.0, &p), 1.0);
        let tri = NeuronParams {
            surrogate: Surrogate::Triangle,
            surrogate_alpha: 1.0,
            ..p
        };
        assert_eq!(surrogate_grad(1.0, &tri), 0.0);
        assert_eq!(surrogate_grad(-1.0, &tri), 0.0);
    }

    #[test]
    fn surrogate_integrates_to_one() {
        // midpoint rule on [-10, 10]
        for p in [
            NeuronParams::default(),
            NeuronParams {
                surrogate: Surrogate::Triangle,
                surrogate_alpha: 1.0,
                ..NeuronParams::default()
            },
        ] {
            let m = 200_000;
            let h = 20.0 / m as f64;
            let area: f64 = (0..m)
                .map(|i| surrogate_grad(-10.0 + (i as f64 + 0.5) * h, &p) * h)
                .sum();
            let prim = surrogate_primitive(10.0, &p) - surrogate_primitive(-10.0, &p);
            assert!((prim - area).abs() < 1e-6);
            if p.surrogate == Surrogate::Triangle {
                assert!((area - 1.0).abs() < 1e-2, "{area}");
            } else {
                // the arctan tails hold 2·(1/2 − atan(10π)/π) of the mass
                let want = 2.0 / PI * (10.0 * PI).atan();
                assert!((area - want).abs() < 1e-9, "{area}");
                assert!((area - 1.0).abs() < 2.1e-2);
            }
        }
    }

    #[test]
    fn primitive_derivative_is_surrogate() {
        for s in [Surrogate::ArcTan, Surrogate::Triangle] {
            let p = NeuronParams {
                surrogate: s,
                surrogate_alpha: 1.5,
                ..NeuronParams::default()
            };
            for v in [-2.0, -0.7, -0.1, 0.2, 0.9, 3.0] {
                let h = 1e-6;
                let fd =
                    (surrogate_primitive(v + h, &p) - surrogate_primitive(v - h, &p)) / (2.0 * h);
                assert!((fd - surrogate_grad(v, &p)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn plif_decay_examples() {
        let p = NeuronParams::plif(2.0, 1.0);
        assert_eq!(p.plif_raw, 0.0);
        assert_eq!(plif_decay(&p).unwrap(), 0.5);
        let deep = NeuronParams {
            plif_raw: -60.0,
            ..p.clone()
        };
        assert!(plif_decay(&deep).unwrap() < 1e-20);
        assert!(plif_decay(&NeuronParams::default()).is_err());
    }

    #[test]
    fn leak_balances_subthreshold_input() {
        let p = p0(1.0);
        let c = 0.8;
        let currents = vec![one(c); 20];
        let r = run(&currents, &p, SpikeFn::Heaviside);
        assert!(r.spikes.iter().all(|s| s.get(0, 0) == 0.0));
        assert!(r.pre_reset.iter().all(|h| h.get(0, 0) == c));
    }

    #[test]
    fn first_spike_time_is_monotone_in_input() {
        let p = p0(4.0);
        let first = |i: f64| {
            let r = run(&vec![one(i); 200], &p, SpikeFn::Heaviside);
            r.spikes
                .iter()
                .position(|s| s.get(0, 0) == 1.0)
                .unwrap_or(usize::MAX)
        };
        let grid: Vec<f64> = (0..100).map(|k| 0.9 + 0.05 * k as f64).collect();
        for w in grid.windows(2) {
            assert!(first(w[1]) <= first(w[0]));
        }
    }

    #[test]
    fn decay_absorption_with_unit_tau() {
        // τ = 1: H_t = I_t regardless of history.
        let p = p0(1.0);
        let currents = vec![one(0.3), one(-0.4), one(0.9)];
        let r = run(&currents, &p, SpikeFn::Heaviside);
        for (h, i) in r.pre_reset.iter().zip(&currents) {
            assert_eq!(h, i);
        }
    }

    #[test]
    fn hard_reset_postcondition() {
        let p = p0(2.0);
        let currents: Vec<_> = (0..6).map(|t| one(0.5 + t as f64)).collect();
        let r = run(&currents, &p, SpikeFn::Heaviside);
        let mut u = 0.0;
        for (h, s) in r.pre_reset.iter().zip(&r.spikes) {
            let sv = s.get(0, 0);
            assert!(sv == 0.0 || sv == 1.0);
            u = if sv == 1.0 { p.u_reset } else { h.get(0, 0) };
        }
        let _ = u;
    }

    #[test]
    fn backward_matches_finite_differences_in_smooth_mode() {
        // detached reset is not the exact derivative, so validate without it
        for mut p in [NeuronParams::lif(1.7, 0.6), NeuronParams::plif(1.7, 0.6)] {
            p.detach_reset = false;
            p.u_reset = -0.1;
            let currents: Vec<DenseMatrix> =
                [0.3, 1.1, -0.2, 0.8].iter().map(|&v| one(v)).collect();
            let w = [0.7, -1.3, 0.4, 2.0];
            let loss = |cur: &[DenseMatrix], p: &NeuronParams| -> f64 {
                run(cur, p, SpikeFn::Smooth)
                    .spikes
                    .iter()
                    .zip(w)
                    .map(|(s, w)| s.get(0, 0) * w)
                    .sum()
            };
            let r = run(&currents, &p, SpikeFn::Smooth);
            let gs: Vec<DenseMatrix> = w.iter().map(|&v| one(v)).collect();
            let g = backward(&currents, &r, &gs, &p);
            let h = 1e-6;
            for t in 0..4 {
                let mut a = currents.clone();
                let mut b = currents.clone();
                a[t].as_mut_slice()[0] += h;
                b[t].as_mut_slice()[0] -= h;
                let fd = (loss(&a, &p) - loss(&b, &p)) / (2.0 * h);
                assert!((fd - g.currents[t].get(0, 0)).abs() < 1e-7, "t={t}");
            }
            let mut pa = p.clone();
            let mut pb = p.clone();
            pa.plif_raw += h;
            pb.plif_raw -= h;
            if p.kind == NeuronKind::Plif {
                let fd = (loss(&currents, &pa) - loss(&currents, &pb)) / (2.0 * h);
                let k = p.decay();
                assert!((fd - g.decay * k * (1.0 - k)).abs() < 1e-7);
            }
        }
    }
}
