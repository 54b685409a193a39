use serde::{Deserialize, Serialize};

use super::{train, TrainReport};
use crate::config::RunConfig;
use crate::error::Result;
use crate::graph::Dataset;
use crate::model::{build_model, ForwardPass, Mode, Model};
use crate::profiler::{
    energy, param_size_mb, quantization_distortion, CostConstants, EnergyReport,
};
use crate::tensor::DenseMatrix;

/// Inference pass over the full graph with rates measured from it.
pub fn profile_model(
    model: &mut Model,
    features: &DenseMatrix,
    c: &CostConstants,
) -> Result<(EnergyReport, ForwardPass)> {
    let x = model.prepare(features, None)?;
    let pass = model.forward(&x, Mode::eval(), None)?;
    let mut report = energy(&model.layer_costs(&pass)?, c)?;
    report.params_mb = param_size_mb(model.num_params());
    if let Some(last) = pass.traces.last() {
        if let Some(s) = &last.spikes {
            report.distortion = Some(quantization_distortion(&last.currents, s)?);
        }
    }
    Ok((report, pass))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub report: TrainReport,
    pub energy: EnergyReport,
    pub params: usize,
    /// Mean firing rate of the spiking layers at inference.
    pub firing_rate_mean: f64,
    pub warnings: Vec<String>,
}

/// Builds, trains and profiles one model for `seed`.
pub fn run_experiment(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<RunOutcome> {
    run_experiment_model(cfg, data, seed).map(|(out, _)| out)
}

/// [`run_experiment`], also handing back the trained model.
pub fn run_experiment_model(
    cfg: &RunConfig,
    data: &Dataset,
    seed: u64,
) -> Result<(RunOutcome, Model)> {
    let mut mc = cfg.model.clone();
    mc.seed = seed;
    let mut model = build_model(&mc, &data.graph, data.features.dim(), data.num_classes())?;
    let report = train(&mut model, data, &cfg.train)?;
    let (energy, pass) = profile_model(
        &mut model,
        data.features.values(),
        &CostConstants::default(),
    )?;
    let out = RunOutcome {
        seed,
        report,
        energy,
        params: model.num_params(),
        firing_rate_mean: pass.mean_rate(),
        warnings: model.warnings.clone(),
    };
    Ok((out, model))
}
