//! The two backbones: a precomputed-propagation model with one spiking
//! layer, and a stack of spiking graph convolutions.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coding::{
    encode_direct, encode_rate, encode_temporal, Coding, DirectCurrent, EncoderSpec,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{
    linear_backward, ms_route, pre_linear_forward, rate_decode, rate_decode_steps,
    readout_backward, readout_forward, spiking_conv_backward, spiking_conv_forward, ForwardCtx,
    LayerInput, LayerTrace, LinearParams, NormKind, Param, SpikingLayer,
};
use crate::neuron::{NeuronKind, NeuronParams, SpikeFn, Surrogate};
use crate::profiler::{LayerCost, OpKind, OpTally};
use crate::spike::{firing_rate, SpikeTrain};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    SpikingSgc,
    SpikingGcn,
}

impl FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spiking_sgc" => Ok(Backbone::SpikingSgc),
            "spiking_gcn" => Ok(Backbone::SpikingGcn),
            _ => Err("spiking_sgc|spiking_gcn".into()),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backbone::SpikingSgc => "spiking_sgc",
            Backbone::SpikingGcn => "spiking_gcn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub time_steps: usize,
    pub u_th: f64,
    pub neuron: NeuronKind,
    pub norm: NormKind,
    pub ms: bool,
    pub jk: bool,
    pub pre_linear: bool,
    pub coding: Coding,
    pub sgc_hops: usize,
    /// Input-feature dropout, training only.
    pub dropout: f64,
    pub seed: u64,
    pub tau: f64,
    pub surrogate: Surrogate,
    pub surrogate_alpha: f64,
    pub detach_reset: bool,
    /// Min-max rescale rate-coded inputs per column instead of clamping.
    pub rescale_inputs: bool,
    /// Latency-coding threshold on max-normalized inputs.
    pub latency_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::gcn()
    }
}

impl ModelConfig {
    pub fn gcn() -> Self {
        Self {
            backbone: Backbone::SpikingGcn,
            num_layers: 2,
            hidden_dim: 128,
            time_steps: 10,
            u_th: 1.0,
            neuron: NeuronKind::Lif,
            norm: NormKind::Stfn,
            ms: false,
            jk: false,
            pre_linear: false,
            coding: Coding::Direct,
            sgc_hops: 2,
            dropout: 0.5,
            seed: 0,
            tau: 2.0,
            surrogate: Surrogate::ArcTan,
            surrogate_alpha: 2.0,
            detach_reset: true,
            rescale_inputs: false,
            latency_threshold: 0.1,
        }
    }

    pub fn sgc() -> Self {
        Self {
            backbone: Backbone::SpikingSgc,
            num_layers: 1,
            norm: NormKind::Batch,
            coding: Coding::Rate,
            ..Self::gcn()
        }
    }

    pub fn neuron_params(&self) -> NeuronParams {
        let mut p = match self.neuron {
            NeuronKind::Lif => NeuronParams::lif(self.tau, self.u_th),
            NeuronKind::Plif => NeuronParams::plif(self.tau, self.u_th),
        };
        p.surrogate = self.surrogate;
        p.surrogate_alpha = self.surrogate_alpha;
        p.detach_reset = self.detach_reset;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.hidden_dim == 0 || self.time_steps == 0 {
            return bad("hidden_dim and time_steps must be >= 1".into());
        }
        if self.backbone == Backbone::SpikingGcn && !(1..=12).contains(&self.num_layers) {
            return bad(format!(
                "num_layers must be in 1..=12, got {}",
                self.num_layers
            ));
        }
        if self.backbone == Backbone::SpikingSgc && self.sgc_hops == 0 {
            return bad("sgc_hops must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.neuron == NeuronKind::Plif && !(self.tau > 1.0) {
            return bad("PLIF needs tau > 1".into());
        }
        if !(self.latency_threshold > 0.0 && self.latency_threshold < 1.0) {
            return bad("latency_threshold must be in (0, 1)".into());
        }
        self.neuron_params().validate()
    }
}

/// Everything trainable plus normalization running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub pre_linear: Option<LinearParams>,
    pub layers: Vec<SpikingLayer>,
    pub readout: LinearParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub training: bool,
    pub spike_fn: SpikeFn,
    /// Salts dropout masks and rate-coding draws.
    pub epoch: u64,
}

impl Mode {
    pub fn train(epoch: u64) -> Self {
        Self {
            training: true,
            spike_fn: SpikeFn::Heaviside,
            epoch,
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            spike_fn: SpikeFn::Heaviside,
            epoch: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Encoded {
    Current(DirectCurrent),
    Spikes(SpikeTrain),
}

impl Encoded {
    pub fn as_input(&self) -> LayerInput<'_> {
        match self {
            Encoded::Current(c) => LayerInput::Current(c),
            Encoded::Spikes(s) => LayerInput::Spikes(s),
        }
    }

    pub fn spikes(&self) -> Option<&SpikeTrain> {
        match self {
            Encoded::Spikes(s) => Some(s),
            Encoded::Current(_) => None,
        }
    }
}

/// One forward pass over the full graph.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Pre-linear input (after dropout).
    pub x_in: DenseMatrix,
    /// Encoder input.
    pub x_enc: DenseMatrix,
    pub encoded: Encoded,
    pub traces: Vec<LayerTrace>,
    pub concat: DenseMatrix,
    pub logits: DenseMatrix,
}

impl ForwardPass {
    pub fn firing_rates(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.firing_rate).collect()
    }

    pub fn input_rate(&self) -> Option<f64> {
        self.encoded.spikes().map(firing_rate)
    }

    /// Spike-count weighted mean rate over every spiking layer.
    pub fn mean_rate(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for t in &self.traces {
            let size = t.currents.iter().map(|m| m.as_slice().len()).sum::<usize>() as f64;
            num += t.firing_rate * size;
            den += size;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// Where an AC op's firing rate comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateSource {
    Encoder,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopRecord {
    pub name: String,
    pub flops: u64,
    pub kind: OpKind,
    pub source: Option<RateSource>,
    /// Executed once per time step in a forward pass.
    pub per_step: bool,
}

pub struct Model {
    cfg: ModelConfig,
    graph: Graph,
    d_in: usize,
    num_classes: usize,
    pub pre_linear: Option<LinearParams>,
    pub layers: Vec<SpikingLayer>,
    pub readout: LinearParams,
    ms_enabled: bool,
    pub warnings: Vec<String>,
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_model(cfg: &ModelConfig, g: &Graph, d_in: usize, num_classes: usize) -> Result<Model> {
    cfg.validate()?;
    if d_in == 0 || num_classes == 0 {
        return Err(Error::Invalid("d_in and num_classes must be >= 1".into()));
    }
    let graph = if g.is_weighted() {
        g.clone()
    } else {
        g.normalize_adjacency()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let h = cfg.hidden_dim;
    let pre_linear = cfg
        .pre_linear
        .then(|| LinearParams::glorot(d_in, h, true, &mut rng));
    let d0 = if cfg.pre_linear { h } else { d_in };
    let neuron = cfg.neuron_params();
    let mut warnings = Vec::new();

    let layers = match cfg.backbone {
        Backbone::SpikingSgc => {
            if cfg.ms {
                warnings
                    .push("membrane shortcut ignored: spiking_sgc has one spiking layer".into());
            }
            vec![SpikingLayer::new(
                "lif",
                LinearParams::glorot(d0, h, true, &mut rng),
                false,
                cfg.norm,
                neuron,
            )]
        }
        Backbone::SpikingGcn => (0..cfg.num_layers)
            .map(|l| {
                let din = if l == 0 { d0 } else { h };
                SpikingLayer::new(
                    format!("conv{l}"),
                    LinearParams::glorot(din, h, true, &mut rng),
                    true,
                    cfg.norm,
                    neuron.clone(),
                )
            })
            .collect(),
    };
    let mut ms_enabled = cfg.ms && cfg.backbone == Backbone::SpikingGcn;
    if ms_enabled {
        if let Some(l) = (1..layers.len()).find(|&l| layers[l].d_out() != layers[l - 1].d_out()) {
            warnings.push(format!(
                "membrane shortcut disabled: layer {l} width {} != {}",
                layers[l].d_out(),
                layers[l - 1].d_out()
            ));
            ms_enabled = false;
        }
    }
    if cfg.pre_linear && cfg.coding == Coding::Temporal {
        warnings.push("pre-linear receives no gradient through latency coding".into());
    }
    let width: usize = if cfg.jk {
        layers.iter().map(SpikingLayer::d_out).sum()
    } else {
        layers.last().map_or(0, SpikingLayer::d_out)
    };
    let readout = LinearParams::glorot(width, num_classes, true, &mut rng);
    Ok(Model {
        cfg: cfg.clone(),
        graph,
        d_in,
        num_classes,
        pre_linear,
        layers,
        readout,
        ms_enabled,
        warnings,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ms_enabled(&self) -> bool {
        self.ms_enabled
    }

    /// Overrides the number of time steps; the trained weights are reused.
    pub fn set_time_steps(&mut self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::Invalid("time_steps must be >= 1".into()));
        }
        self.cfg.time_steps = t;
        Ok(())
    }

    /// Sets every layer's reset-path detaching.
    pub fn set_detach_reset(&mut self, detach: bool) {
        self.cfg.detach_reset = detach;
        for l in &mut self.layers {
            l.neuron.detach_reset = detach;
        }
    }

    fn readout_layers(&self) -> Vec<usize> {
        if self.cfg.jk {
            (0..self.layers.len()).collect()
        } else {
            vec![self.layers.len() - 1]
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(p) = &self.pre_linear {
            v.extend(p.params());
        }
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend(self.readout.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(p) = &mut self.pre_linear {
            v.extend(p.params_mut());
        }
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend(self.readout.params_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            pre_linear: self.pre_linear.clone(),
            layers: self.layers.clone(),
            readout: self.readout.clone(),
        }
    }

    pub fn load_state(&mut self, s: ModelState) -> Result<()> {
        let same = s.layers.len() == self.layers.len()
            && s.pre_linear.as_ref().map(LinearParams::d_in)
                == self.pre_linear.as_ref().map(LinearParams::d_in)
            && s.readout.weight.value.shape() == self.readout.weight.value.shape()
            && s.layers.iter().zip(&self.layers).all(|(a, b)| {
                a.linear.weight.value.shape() == b.linear.weight.value.shape()
                    && a.norm.kind == b.norm.kind
            });
        if !same {
            return Err(Error::Invalid(
                "checkpoint does not match the model architecture".into(),
            ));
        }
        self.pre_linear = s.pre_linear;
        self.layers = s.layers;
        self.readout = s.readout;
        Ok(())
    }

    /// Time-invariant input preprocessing: `K` hops of normalized
    /// propagation for the SGC backbone, identity otherwise.
    pub fn prepare(
        &self,
        features: &DenseMatrix,
        mut tally: Option<&mut OpTally>,
    ) -> Result<DenseMatrix> {
        if features.shape() != (self.graph.num_nodes(), self.d_in) {
            return Err(Error::shape(
                "model input",
                format!("{}x{}", self.graph.num_nodes(), self.d_in),
                format!("{}x{}", features.rows(), features.cols()),
            ));
        }
        let mut x = features.clone();
        if self.cfg.backbone == Backbone::SpikingSgc {
            let kind = self.propagate_kind();
            let flops = ((self.graph.nnz() + self.graph.num_nodes()) * self.d_in) as u64;
            for _ in 0..self.cfg.sgc_hops {
                if let Some(t) = tally.as_deref_mut() {
                    t.record("propagate", kind, flops);
                }
                x = self.graph.propagate(&x)?;
            }
        }
        Ok(x)
    }

    fn propagate_kind(&self) -> OpKind {
        if self.cfg.coding == Coding::Direct {
            OpKind::Mac
        } else {
            OpKind::Ac
        }
    }

    fn encoder_spec(&self, mode: &Mode) -> EncoderSpec {
        EncoderSpec {
            scheme: self.cfg.coding,
            steps: self.cfg.time_steps,
            tau: self.cfg.tau,
            u_th: self.cfg.latency_threshold,
            seed: mix_seed(
                self.cfg.seed,
                if mode.training {
                    0x100 + mode.epoch
                } else {
                    0xE7A1
                },
            ),
            clamp: true,
            rescale: self.cfg.rescale_inputs,
        }
    }

    fn encode(&self, x: &DenseMatrix, mode: &Mode) -> Result<Encoded> {
        let spec = self.encoder_spec(mode);
        Ok(match self.cfg.coding {
            Coding::Direct => Encoded::Current(encode_direct(x, &spec)?),
            Coding::Rate => Encoded::Spikes(encode_rate(x, &spec)?),
            Coding::Temporal => {
                let m = x.max_abs();
                let mut xn = x.clone();
                if m > 0.0 {
                    xn.scale(1.0 / m);
                }
                Encoded::Spikes(encode_temporal(&xn, &spec)?)
            }
        })
    }

    pub fn forward(
        &mut self,
        prepared: &DenseMatrix,
        mode: Mode,
        mut tally: Option<&mut OpTally>,
    ) -> Result<ForwardPass> {
        let (n, _) = prepared.shape();
        let mut x_in = prepared.clone();
        if mode.training && self.cfg.dropout > 0.0 {
            let keep = 1.0 - self.cfg.dropout;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, 0xD0 + mode.epoch));
            for v in x_in.as_mut_slice() {
                *v = if rng.gen::<f64>() < keep {
                    *v / keep
                } else {
                    0.0
                };
            }
        }
        let x_enc = match &self.pre_linear {
            Some(p) => {
                if let Some(t) = tally.as_deref_mut() {
                    t.record("pre_linear", OpKind::Mac, (n * p.d_in() * p.d_out()) as u64);
                }
                pre_linear_forward(&x_in, p)?
            }
            None => x_in.clone(),
        };
        let encoded = self.encode(&x_enc, &mode)?;

        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let trace = {
                let input = if l == 0 {
                    encoded.as_input()
                } else {
                    traces[l - 1].output()
                };
                let ms = if self.ms_enabled && l > 0 {
                    ms_route(l, &traces[l - 1], self.layers[l].d_out())?
                } else {
                    None
                };
                let mut ctx = ForwardCtx {
                    graph: &self.graph,
                    training: mode.training,
                    spike_fn: mode.spike_fn,
                    tally: tally.as_deref_mut(),
                };
                spiking_conv_forward(&mut self.layers[l], input, ms, &mut ctx)?
            };
            traces.push(trace);
        }

        let rates: Vec<DenseMatrix> = self
            .readout_layers()
            .into_iter()
            .map(|l| match &traces[l].spikes {
                Some(s) => rate_decode(s),
                None => rate_decode_steps(&traces[l].run.spikes),
            })
            .collect();
        let (logits, concat) = readout_forward(&rates, &self.readout)?;
        if let Some(t) = tally {
            t.record(
                "readout",
                OpKind::Mac,
                (n * self.readout.d_in() * self.readout.d_out()) as u64,
            );
        }
        logits.check_finite("logits")?;
        Ok(ForwardPass {
            x_in,
            x_enc,
            encoded,
            traces,
            concat,
            logits,
        })
    }

    /// Backpropagation through time from `dL/dlogits`; accumulates into
    /// every parameter's gradient.
    pub fn backward(&mut self, pass: &ForwardPass, g_logits: &DenseMatrix) -> Result<()> {
        let readout_layers = self.readout_layers();
        let widths: Vec<usize> = readout_layers
            .iter()
            .map(|&l| self.layers[l].d_out())
            .collect();
        let g_rates = readout_backward(&pass.concat, &widths, &mut self.readout, g_logits)?;
        let steps = self.cfg.time_steps;
        let mut g_spikes: Vec<Vec<DenseMatrix>> = self
            .layers
            .iter()
            .map(|l| vec![DenseMatrix::zeros(self.graph.num_nodes(), l.d_out()); steps])
            .collect();
        for (&l, g) in readout_layers.iter().zip(&g_rates) {
            for gs in g_spikes[l].iter_mut() {
                gs.add_scaled(g, 1.0 / steps as f64);
            }
        }
        let wants_input_grad = self.pre_linear.is_some() && self.cfg.coding != Coding::Temporal;
        let mut extra: Option<Vec<DenseMatrix>> = None;
        let mut g_enc: Option<Vec<DenseMatrix>> = None;
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 {
                pass.encoded.as_input()
            } else {
                pass.traces[l - 1].output()
            };
            let need = l > 0 || wants_input_grad;
            let grad = spiking_conv_backward(
                &mut self.layers[l],
                &self.graph,
                input,
                &pass.traces[l],
                &g_spikes[l],
                extra.as_deref(),
                need,
            )?;
            extra = grad.ms;
            if l > 0 {
                if let Some(gi) = grad.input {
                    for (acc, g) in g_spikes[l - 1].iter_mut().zip(&gi) {
                        acc.add_assign(g);
                    }
                }
            } else {
                g_enc = grad.input;
            }
        }
        if let (Some(p), Some(g)) = (self.pre_linear.as_mut(), g_enc) {
            let mut gx = g[0].clone();
            for m in &g[1..] {
                gx.add_assign(m);
            }
            if self.cfg.coding == Coding::Rate && !self.cfg.rescale_inputs {
                // straight-through estimator, zero outside the clamp range
                for (gv, xv) in gx.as_mut_slice().iter_mut().zip(pass.x_enc.as_slice()) {
                    if !(0.0..=1.0).contains(xv) {
                        *gv = 0.0;
                    }
                }
            }
            linear_backward(&pass.x_in, p, &gx, false)?;
        }
        Ok(())
    }

    /// Theoretical FLOPs of every op, in forward order.
    pub fn flop_records(&self) -> Vec<FlopRecord> {
        let n = self.graph.num_nodes();
        let edges = self.graph.nnz() + n;
        let mut out = Vec::new();
        if self.cfg.backbone == Backbone::SpikingSgc {
            let kind = self.propagate_kind();
            out.push(FlopRecord {
                name: "propagate".into(),
                flops: (self.cfg.sgc_hops * edges * self.d_in) as u64,
                kind,
                source: (kind == OpKind::Ac).then_some(RateSource::Encoder),
                per_step: false,
            });
        }
        if let Some(p) = &self.pre_linear {
            out.push(FlopRecord {
                name: "pre_linear".into(),
                flops: (n * p.d_in() * p.d_out()) as u64,
                kind: OpKind::Mac,
                source: None,
                per_step: false,
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let source = if l > 0 {
                Some(RateSource::Layer(l - 1))
            } else if self.cfg.coding == Coding::Direct {
                None
            } else {
                Some(RateSource::Encoder)
            };
            let kind = if source.is_some() {
                OpKind::Ac
            } else {
                OpKind::Mac
            };
            let d = layer.d_out();
            let mut push = |suffix: &str, flops: usize| {
                out.push(FlopRecord {
                    name: format!("{}.{suffix}", layer.name),
                    flops: flops as u64,
                    kind,
                    source,
                    per_step: source.is_some(),
                })
            };
            push("linear", n * layer.linear.d_in() * d);
            if layer.propagate {
                push("agg", edges * d);
            }
            if layer.norm.kind != NormKind::None {
                push("norm", 4 * n * d);
            }
        }
        out.push(FlopRecord {
            name: "readout".into(),
            flops: (n * self.readout.d_in() * self.readout.d_out()) as u64,
            kind: OpKind::Mac,
            source: None,
            per_step: false,
        });
        out
    }

    /// FLOP records with the rates measured in `pass` attached.
    pub fn layer_costs(&self, pass: &ForwardPass) -> Result<Vec<LayerCost>> {
        let steps = self.cfg.time_steps;
        self.flop_records()
            .into_iter()
            .map(|r| {
                Ok(match r.kind {
                    OpKind::Mac => LayerCost::mac(r.name, r.flops),
                    OpKind::Ac => {
                        let rate = match r.source {
                            Some(RateSource::Encoder) => pass
                                .input_rate()
                                .ok_or_else(|| Error::MissingRate(r.name.clone()))?,
                            Some(RateSource::Layer(l)) => pass.traces[l].firing_rate,
                            None => return Err(Error::MissingRate(r.name)),
                        };
                        LayerCost::ac(r.name, r.flops, steps, rate)
                    }
                })
            })
            .collect()
    }
}
