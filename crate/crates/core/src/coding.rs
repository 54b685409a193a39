//! Neural coding: real features to spikes (rate, latency) or to a constant
//! current repeated at every step (direct).

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTrain;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coding {
    Rate,
    Temporal,
    Direct,
}

impl FromStr for Coding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rate" => Ok(Coding::Rate),
            "temporal" => Ok(Coding::Temporal),
            "direct" => Ok(Coding::Direct),
            _ => Err("rate|temporal|direct".into()),
        }
    }
}

impl std::fmt::Display for Coding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Coding::Rate => "rate",
            Coding::Temporal => "temporal",
            Coding::Direct => "direct",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub scheme: Coding,
    pub steps: usize,
    /// Latency time constant.
    pub tau: f64,
    /// Latency threshold.
    pub u_th: f64,
    pub seed: u64,
    /// Clamp rate-coded inputs into `[0, 1]`.
    pub clamp: bool,
    /// Min-max rescale each column into `[0, 1]` before rate coding.
    /// Takes precedence over `clamp`.
    pub rescale: bool,
}

impl EncoderSpec {
    pub fn new(scheme: Coding, steps: usize) -> Self {
        Self {
            scheme,
            steps,
            tau: 1.0,
            u_th: 1.0,
            seed: 0,
            clamp: true,
            rescale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Invalid("encoder needs T >= 1".into()));
        }
        if self.scheme == Coding::Temporal && !(self.tau > 0.0 && self.u_th > 0.0) {
            return Err(Error::Invalid(
                "temporal coding needs tau > 0 and u_th > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Values fed to the rate encoder: rescaled, clamped, or checked.
pub fn rate_probabilities(x: &DenseMatrix, spec: &EncoderSpec) -> Result<DenseMatrix> {
    let mut p = x.clone();
    if spec.rescale {
        for c in 0..x.cols() {
            let (lo, hi) = (0..x.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(x.get(r, c)), hi.max(x.get(r, c)))
            });
            let span = hi - lo;
            for r in 0..x.rows() {
                let v = if span > 0.0 {
                    (x.get(r, c) - lo) / span
                } else {
                    0.0
                };
                p.set(r, c, v);
            }
        }
    } else if spec.clamp {
        p.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0));
    } else if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!(
            "rate coding input {v} outside [0, 1] with clamping disabled"
        )));
    }
    Ok(p)
}

/// Independent Bernoulli spikes with `P(s = 1) = x`.
pub fn encode_rate(x: &DenseMatrix, spec: &EncoderSpec) -> Result<SpikeTrain> {
    spec.validate()?;
    let p = rate_probabilities(x, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = p.shape();
    let mut s = SpikeTrain::zeros(spec.steps, n, d);
    for t in 0..spec.steps {
        for u in 0..n {
            for (c, &prob) in p.row(u).iter().enumerate() {
                if rng.gen::<f64>() < prob {
                    s.set(t, u, c, true);
                }
            }
        }
    }
    Ok(s)
}

/// Continuous first-spike latency `τ·ln(h / (h − u_th))`, infinite when
/// `h <= u_th`.
pub fn spike_latency(h: f64, tau: f64, u_th: f64) -> f64 {
    if h > u_th {
        tau * (h / (h - u_th)).ln()
    } else {
        f64::INFINITY
    }
}

/// Zero-based step at which a value fires, or `None` for a silent channel.
///
/// The bin width is the latency of the largest value `h_max` in the matrix,
/// so `h_max` fires at step 0 and latencies beyond `T` bins are dropped.
pub fn temporal_step(h: f64, h_max: f64, spec: &EncoderSpec) -> Option<usize> {
    let t = spike_latency(h, spec.tau, spec.u_th);
    let bin = spike_latency(h_max, spec.tau, spec.u_th);
    if !t.is_finite() || !bin.is_finite() {
        return None;
    }
    let k = if bin > 0.0 {
        (t / bin).ceil().max(1.0)
    } else {
        1.0
    };
    (k <= spec.steps as f64).then(|| k as usize - 1)
}

/// One spike per supra-threshold channel, earlier for larger values.
pub fn encode_temporal(x: &DenseMatrix, spec: &EncoderSpec) -> Result<SpikeTrain> {
    spec.validate()?;
    let (n, d) = x.shape();
    let h_max = x
        .as_slice()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = SpikeTrain::zeros(spec.steps, n, d);
    for u in 0..n {
        for (c, &h) in x.row(u).iter().enumerate() {
            if let Some(t) = temporal_step(h, h_max, spec) {
                s.set(t, u, c, true);
            }
        }
    }
    Ok(s)
}

/// The same real current at every step; holds one copy regardless of `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectCurrent {
    current: DenseMatrix,
    steps: usize,
}

impl DirectCurrent {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn at(&self, t: usize) -> &DenseMatrix {
        assert!(t < self.steps, "step {t} out of range (T = {})", self.steps);
        &self.current
    }

    pub fn current(&self) -> &DenseMatrix {
        &self.current
    }
}

pub fn encode_direct(x: &DenseMatrix, spec: &EncoderSpec) -> Result<DirectCurrent> {
    spec.validate()?;
    Ok(DirectCurrent {
        current: x.clone(),
        steps: spec.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spike::firing_rate;

    fn spec(scheme: Coding, steps: usize) -> EncoderSpec {
        EncoderSpec::new(scheme, steps)
    }

    #[test]
    fn rate_extremes() {
        let ones = DenseMatrix::filled(3, 4, 1.0);
        assert_eq!(
            firing_rate(&encode_rate(&ones, &spec(Coding::Rate, 5)).unwrap()),
            1.0
        );
        let zeros = DenseMatrix::zeros(3, 4);
        assert_eq!(
            firing_rate(&encode_rate(&zeros, &spec(Coding::Rate, 5)).unwrap()),
            0.0
        );
    }

    #[test]
    fn rate_is_seeded() {
        let x = DenseMatrix::filled(4, 3, 0.4);
        let a = encode_rate(&x, &spec(Coding::Rate, 7)).unwrap();
        let b = encode_rate(&x, &spec(Coding::Rate, 7)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(Coding::Rate, 7);
        other.seed = 1;
        assert_ne!(a, encode_rate(&x, &other).unwrap());
    }

    #[test]
    fn rate_range_policy() {
        let x = DenseMatrix::from_vec(1, 2, vec![-0.5, 1.5]).unwrap();
        let mut s = spec(Coding::Rate, 3);
        let clamped = encode_rate(&x, &s).unwrap();
        assert_eq!(clamped.count_ones(), 3);
        s.clamp = false;
        assert!(encode_rate(&x, &s).is_err());
        s.rescale = true;
        let p =
            rate_probabilities(&DenseMatrix::from_vec(2, 1, vec![2.0, 4.0]).unwrap(), &s).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn latency_formula() {
        assert!((spike_latency(2.0, 1.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((spike_latency(2.0, 1.0, 1.0) - 0.6931).abs() < 1e-4);
        assert!(spike_latency(1.0, 1.0, 1.0).is_infinite());
    }

    #[test]
    fn temporal_threshold_is_silent() {
        let x = DenseMatrix::from_vec(1, 2, vec![1.0, 3.0]).unwrap();
        let s = encode_temporal(&x, &spec(Coding::Temporal, 8)).unwrap();
        assert!((0..8).all(|t| !s.get(t, 0, 0)));
        assert!(s.get(0, 0, 1));
        assert_eq!(s.count_ones(), 1);
    }

    #[test]
    fn direct_is_identical_each_step() {
        let x = DenseMatrix::from_vec(2, 2, vec![0.1, -2.0, 3.5, 0.0]).unwrap();
        let one = encode_direct(&x, &spec(Coding::Direct, 1)).unwrap();
        let five = encode_direct(&x, &spec(Coding::Direct, 5)).unwrap();
        for t in 0..5 {
            assert_eq!(five.at(t), &x);
        }
        assert_eq!(one.at(0), five.at(4));
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(encode_direct(&DenseMatrix::zeros(1, 1), &spec(Coding::Direct, 0)).is_err());
    }
}
