use serde::{Deserialize, Serialize};

use super::norm::{batchnorm_backward, batchnorm_forward, stfn_backward, stfn_forward};
use super::{LinearParams, NormCache, NormKind, NormParams, Param};
use crate::coding::DirectCurrent;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::neuron::{self, NeuronKind, NeuronParams, NeuronRun, SpikeFn};
use crate::profiler::{OpKind, OpTally};
use crate::spike::{firing_rate, gather_rows, scatter_rows_transposed, SpikeTrain};
use crate::tensor::DenseMatrix;

/// Linear map, optional graph aggregation, rectifier and a spiking neuron
/// population, unrolled over `T` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikingLayer {
    pub name: String,
    pub linear: LinearParams,
    /// Aggregate with the normalized adjacency after the linear map.
    pub propagate: bool,
    pub norm: NormParams,
    pub neuron: NeuronParams,
    /// Raw PLIF decay parameter; `None` for LIF.
    pub plif: Option<Param>,
}

impl SpikingLayer {
    pub fn new(
        name: impl Into<String>,
        linear: LinearParams,
        propagate: bool,
        norm: NormKind,
        neuron: NeuronParams,
    ) -> Self {
        let d = linear.d_out();
        let plif = (neuron.kind == NeuronKind::Plif).then(|| Param::scalar(neuron.plif_raw));
        Self {
            name: name.into(),
            linear,
            propagate,
            norm: NormParams::new(norm, d),
            neuron,
            plif,
        }
    }

    /// Neuron parameters with the current learnable PLIF decay.
    pub fn neuron_params(&self) -> NeuronParams {
        let mut p = self.neuron.clone();
        if let Some(a) = &self.plif {
            p.plif_raw = a.value.as_slice()[0];
        }
        p
    }

    pub fn d_out(&self) -> usize {
        self.linear.d_out()
    }

    pub fn num_params(&self) -> usize {
        self.linear.num_params() + self.norm.num_params() + self.plif.as_ref().map_or(0, Param::len)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.linear.params_mut();
        v.extend(self.norm.params_mut());
        v.extend(self.plif.as_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.linear.params();
        v.extend(self.norm.params());
        v.extend(self.plif.as_ref());
        v
    }
}

/// What a spiking layer consumes.
#[derive(Clone, Copy, Debug)]
pub enum LayerInput<'a> {
    Spikes(&'a SpikeTrain),
    /// Real-valued per-step input; spikes relaxed by the smooth validation
    /// mode.
    Steps(&'a [DenseMatrix]),
    /// Time-invariant current (direct coding).
    Current(&'a DirectCurrent),
}

impl LayerInput<'_> {
    pub fn steps(&self) -> usize {
        match self {
            LayerInput::Spikes(s) => s.steps(),
            LayerInput::Steps(x) => x.len(),
            LayerInput::Current(c) => c.steps(),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            LayerInput::Spikes(s) => (s.nodes(), s.channels()),
            LayerInput::Steps(x) => x.first().map_or((0, 0), DenseMatrix::shape),
            LayerInput::Current(c) => c.current().shape(),
        }
    }

    fn is_spiking(&self) -> bool {
        matches!(self, LayerInput::Spikes(_) | LayerInput::Steps(_))
    }
}

pub struct ForwardCtx<'a> {
    pub graph: &'a Graph,
    pub training: bool,
    pub spike_fn: SpikeFn,
    pub tally: Option<&'a mut OpTally>,
}

impl ForwardCtx<'_> {
    fn record(&mut self, name: &str, kind: OpKind, flops: u64) {
        if let Some(t) = self.tally.as_deref_mut() {
            t.record(name, kind, flops);
        }
    }
}

/// Everything one layer's forward pass recorded.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Rectifier cache; stats over one step when the input was time-invariant.
    pub norm: Option<NormCache>,
    /// Neuron input per step, membrane shortcut included.
    pub currents: Vec<DenseMatrix>,
    pub run: NeuronRun,
    /// Packed output; `None` under the smooth validation mode.
    pub spikes: Option<SpikeTrain>,
    pub firing_rate: f64,
    pub time_invariant: bool,
    pub used_ms: bool,
}

impl LayerTrace {
    pub fn steps(&self) -> usize {
        self.currents.len()
    }

    /// Membrane potentials after integrate, before reset.
    pub fn potentials(&self) -> &[DenseMatrix] {
        &self.run.pre_reset
    }

    pub fn output(&self) -> LayerInput<'_> {
        match &self.spikes {
            Some(s) => LayerInput::Spikes(s),
            None => LayerInput::Steps(&self.run.spikes),
        }
    }
}

/// The previous layer's neuron input, routed as a membrane shortcut into
/// layer `layer_index`. Layer 0 has no predecessor.
pub fn ms_route(
    layer_index: usize,
    prev: &LayerTrace,
    d_out: usize,
) -> Result<Option<&[DenseMatrix]>> {
    if layer_index == 0 {
        return Ok(None);
    }
    let d_prev = prev.currents.first().map_or(0, DenseMatrix::cols);
    if d_prev != d_out {
        return Err(Error::shape("membrane shortcut", d_out, d_prev));
    }
    Ok(Some(&prev.currents))
}

fn apply_norm(
    layer: &mut SpikingLayer,
    pre: Vec<DenseMatrix>,
    training: bool,
) -> Result<(Vec<DenseMatrix>, Option<NormCache>)> {
    match layer.norm.kind {
        NormKind::None => Ok((pre, None)),
        NormKind::Stfn => {
            let (y, c) = stfn_forward(&pre, &layer.norm, layer.neuron.u_th)?;
            Ok((y, Some(c)))
        }
        NormKind::Batch => {
            let parts = pre.len();
            let (y, c) = batchnorm_forward(&DenseMatrix::vstack(&pre)?, &mut layer.norm, training)?;
            Ok((y.vsplit(parts), Some(c)))
        }
    }
}

pub fn spiking_conv_forward(
    layer: &mut SpikingLayer,
    input: LayerInput<'_>,
    ms: Option<&[DenseMatrix]>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<LayerTrace> {
    let steps = input.steps();
    let (n, d_in) = input.dims();
    let d_out = layer.d_out();
    if steps == 0 {
        return Err(Error::Invalid(format!(
            "{}: input has no time steps",
            layer.name
        )));
    }
    if d_in != layer.linear.d_in() {
        return Err(Error::shape(
            "spiking_conv_forward input",
            layer.linear.d_in(),
            d_in,
        ));
    }
    if n != ctx.graph.num_nodes() {
        return Err(Error::shape(
            "spiking_conv_forward nodes",
            ctx.graph.num_nodes(),
            n,
        ));
    }
    if let Some(m) = ms {
        if m.len() != steps || m.iter().any(|x| x.shape() != (n, d_out)) {
            return Err(Error::shape(
                "membrane shortcut",
                format!("{steps}x{n}x{d_out}"),
                "mismatched currents",
            ));
        }
    }
    let kind = if input.is_spiking() {
        OpKind::Ac
    } else {
        OpKind::Mac
    };
    let w = &layer.linear.weight.value;
    let linear_flops = (n * d_in * d_out) as u64;
    let linear_name = format!("{}.linear", layer.name);

    let mut pre: Vec<DenseMatrix> = match input {
        LayerInput::Spikes(s) => (0..steps)
            .map(|t| {
                if let Some(tally) = ctx.tally.as_deref_mut() {
                    tally.record_executed(&linear_name, s.count_ones_step(t) * d_out as u64);
                }
                ctx.record(&linear_name, kind, linear_flops);
                gather_rows(s, t, w)
            })
            .collect::<Result<_>>()?,
        LayerInput::Steps(x) => x
            .iter()
            .map(|m| {
                ctx.record(&linear_name, kind, linear_flops);
                m.matmul(w)
            })
            .collect::<Result<_>>()?,
        LayerInput::Current(c) => {
            ctx.record(&linear_name, kind, linear_flops);
            vec![c.current().matmul(w)?]
        }
    };
    let time_invariant = matches!(input, LayerInput::Current(_));

    if layer.propagate {
        let agg = format!("{}.agg", layer.name);
        for z in pre.iter_mut() {
            ctx.record(&agg, kind, ((ctx.graph.nnz() + n) * d_out) as u64);
            *z = ctx.graph.propagate(z)?;
        }
    }
    if let Some(b) = layer.linear.bias_slice() {
        let b = b.to_vec();
        pre.iter_mut().for_each(|z| z.add_row_vector(&b));
    }
    if layer.norm.kind != NormKind::None {
        let name = format!("{}.norm", layer.name);
        for _ in 0..pre.len() {
            ctx.record(&name, kind, (4 * n * d_out) as u64);
        }
    }
    let (normed, norm) = apply_norm(layer, pre, ctx.training)?;
    let mut currents = if time_invariant {
        vec![normed[0].clone(); steps]
    } else {
        normed
    };
    if let Some(m) = ms {
        for (c, x) in currents.iter_mut().zip(m) {
            c.add_assign(x);
        }
    }
    for c in &currents {
        c.check_finite(&format!("{} currents", layer.name))?;
    }
    let run = neuron::run(&currents, &layer.neuron_params(), ctx.spike_fn);
    let (spikes, rate) = match ctx.spike_fn {
        SpikeFn::Heaviside => {
            let s = SpikeTrain::from_dense(&run.spikes)?;
            let r = firing_rate(&s);
            (Some(s), r)
        }
        SpikeFn::Smooth => {
            let total: f64 = run.spikes.iter().flat_map(|m| m.as_slice()).sum();
            let count = (steps * n * d_out).max(1) as f64;
            (None, total / count)
        }
    };
    Ok(LayerTrace {
        norm,
        currents,
        run,
        spikes,
        firing_rate: rate,
        time_invariant,
        used_ms: ms.is_some(),
    })
}

/// Gradients a layer hands upstream.
#[derive(Clone, Debug, Default)]
pub struct LayerGrad {
    /// dL/d(input), per step; a single matrix for a time-invariant input.
    pub input: Option<Vec<DenseMatrix>>,
    /// dL/d(previous layer currents) through the membrane shortcut.
    pub ms: Option<Vec<DenseMatrix>>,
}

/// Adjoint of [`spiking_conv_forward`]. Accumulates parameter gradients
/// into `layer`; `extra_currents` is any gradient already flowing into this
/// layer's neuron input from a downstream shortcut.
pub fn spiking_conv_backward(
    layer: &mut SpikingLayer,
    graph: &Graph,
    input: LayerInput<'_>,
    trace: &LayerTrace,
    grad_spikes: &[DenseMatrix],
    extra_currents: Option<&[DenseMatrix]>,
    need_input_grad: bool,
) -> Result<LayerGrad> {
    let np = layer.neuron_params();
    let ng = neuron::backward(&trace.currents, &trace.run, grad_spikes, &np);
    let mut g_i = ng.currents;
    if let Some(extra) = extra_currents {
        for (g, e) in g_i.iter_mut().zip(extra) {
            g.add_assign(e);
        }
    }
    if let Some(a) = layer.plif.as_mut() {
        let k = np.decay();
        a.grad.as_mut_slice()[0] += ng.decay * k * (1.0 - k);
    }
    let g_ms = trace.used_ms.then(|| g_i.clone());

    let mut g_c = if trace.time_invariant {
        let mut sum = g_i[0].clone();
        for g in &g_i[1..] {
            sum.add_assign(g);
        }
        vec![sum]
    } else {
        g_i
    };
    if let Some(cache) = &trace.norm {
        g_c = match layer.norm.kind {
            NormKind::Stfn => stfn_backward(cache, &mut layer.norm, &g_c),
            NormKind::Batch => {
                let parts = g_c.len();
                batchnorm_backward(cache, &mut layer.norm, &DenseMatrix::vstack(&g_c)?)
                    .vsplit(parts)
            }
            NormKind::None => g_c,
        };
    }
    if let Some(b) = layer.linear.bias.as_mut() {
        for g in &g_c {
            for (acc, s) in b.grad.as_mut_slice().iter_mut().zip(g.sum_rows()) {
                *acc += s;
            }
        }
    }
    let g_z: Vec<DenseMatrix> = if layer.propagate {
        g_c.iter()
            .map(|g| graph.propagate(g))
            .collect::<Result<_>>()?
    } else {
        g_c
    };

    match input {
        LayerInput::Spikes(s) => {
            for (t, g) in g_z.iter().enumerate() {
                scatter_rows_transposed(s, t, g, &mut layer.linear.weight.grad)?;
            }
        }
        LayerInput::Steps(x) => {
            for (xm, g) in x.iter().zip(&g_z) {
                layer
                    .linear
                    .weight
                    .grad
                    .add_assign(&xm.transpose_matmul(g)?);
            }
        }
        LayerInput::Current(c) => {
            layer
                .linear
                .weight
                .grad
                .add_assign(&c.current().transpose_matmul(&g_z[0])?);
        }
    }
    let input_grad = if need_input_grad {
        Some(
            g_z.iter()
                .map(|g| g.matmul_transposed(&layer.linear.weight.value))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(LayerGrad {
        input: input_grad,
        ms: g_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{encode_direct, Coding, EncoderSpec};

    fn single_node() -> Graph {
        Graph::from_edges(1, &[]).unwrap().normalize_adjacency()
    }

    #[test]
    fn zero_input_stays_silent() {
        let g = Graph::from_edges(3, &[(0, 1)])
            .unwrap()
            .normalize_adjacency();
        let lin = LinearParams::new(DenseMatrix::filled(2, 2, 1.0), Some(vec![0.0, 0.0])).unwrap();
        let mut layer = SpikingLayer::new("l", lin, true, NormKind::None, NeuronParams::default());
        let s = SpikeTrain::zeros(4, 3, 2);
        let mut ctx = ForwardCtx {
            graph: &g,
            training: true,
            spike_fn: SpikeFn::Heaviside,
            tally: None,
        };
        let tr = spiking_conv_forward(&mut layer, LayerInput::Spikes(&s), None, &mut ctx).unwrap();
        assert_eq!(tr.firing_rate, 0.0);
        assert!(tr.currents.iter().all(|c| c.max_abs() == 0.0));
        assert!(tr.potentials().iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn constant_spike_fires_every_step() {
        let g = single_node();
        let lin = LinearParams::new(DenseMatrix::identity(1), None).unwrap();
        let mut layer =
            SpikingLayer::new("l", lin, true, NormKind::None, NeuronParams::lif(1.0, 1.0));
        let s = SpikeTrain::from_fn(3, 1, 1, |_, _, _| true);
        let mut ctx = ForwardCtx {
            graph: &g,
            training: false,
            spike_fn: SpikeFn::Heaviside,
            tally: None,
        };
        let tr = spiking_conv_forward(&mut layer, LayerInput::Spikes(&s), None, &mut ctx).unwrap();
        assert_eq!(tr.spikes.unwrap(), s);
    }

    #[test]
    fn direct_current_is_time_invariant() {
        let g = Graph::from_edges(2, &[(0, 1)])
            .unwrap()
            .normalize_adjacency();
        let lin = LinearParams::new(DenseMatrix::filled(1, 1, 1.0), None).unwrap();
        let mut layer =
            SpikingLayer::new("l", lin, false, NormKind::None, NeuronParams::lif(2.0, 1.0));
        let x = DenseMatrix::from_vec(2, 1, vec![0.6, 3.0]).unwrap();
        let c = encode_direct(&x, &EncoderSpec::new(Coding::Direct, 4)).unwrap();
        let mut ctx = ForwardCtx {
            graph: &g,
            training: false,
            spike_fn: SpikeFn::Heaviside,
            tally: None,
        };
        let tr = spiking_conv_forward(&mut layer, LayerInput::Current(&c), None, &mut ctx).unwrap();
        assert!(tr.time_invariant);
        assert!(tr.currents.iter().all(|m| m == &x));
        let s = tr.spikes.unwrap();
        assert!((0..4).all(|t| s.get(t, 1, 0)));
    }

    #[test]
    fn ms_adds_previous_currents() {
        let g = single_node();
        let lin = LinearParams::new(DenseMatrix::filled(1, 1, 0.5), None).unwrap();
        let mut layer = SpikingLayer::new("l", lin, false, NormKind::None, NeuronParams::default());
        let s = SpikeTrain::from_fn(2, 1, 1, |_, _, _| true);
        let prev = vec![DenseMatrix::filled(1, 1, 0.25); 2];
        let mut ctx = ForwardCtx {
            graph: &g,
            training: false,
            spike_fn: SpikeFn::Heaviside,
            tally: None,
        };
        let tr = spiking_conv_forward(&mut layer, LayerInput::Spikes(&s), Some(&prev), &mut ctx)
            .unwrap();
        assert!(tr.currents.iter().all(|c| c.get(0, 0) == 0.75));
    }

    #[test]
    fn ms_route_checks_dims() {
        let g = single_node();
        let lin = LinearParams::new(DenseMatrix::filled(1, 2, 0.5), None).unwrap();
        let mut layer = SpikingLayer::new("l", lin, false, NormKind::None, NeuronParams::default());
        let s = SpikeTrain::zeros(2, 1, 1);
        let mut ctx = ForwardCtx {
            graph: &g,
            training: false,
            spike_fn: SpikeFn::Heaviside,
            tally: None,
        };
        let tr = spiking_conv_forward(&mut layer, LayerInput::Spikes(&s), None, &mut ctx).unwrap();
        assert!(ms_route(0, &tr, 2).unwrap().is_none());
        assert!(ms_route(1, &tr, 2).unwrap().is_some());
        assert!(ms_route(1, &tr, 3).is_err());
    }
}
