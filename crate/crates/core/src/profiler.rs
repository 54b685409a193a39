//! FLOPs accounting and the theoretical energy model.
//!
//! Spike-driven work is charged `e_ac · FP · T · R` and full-precision work
//! `e_mac · FP`. One AC and one MAC each count as a single FLOP.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTrain;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Ac,
    Mac,
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OpKind::Ac => "AC",
            OpKind::Mac => "MAC",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TallyEntry {
    pub kind: Option<OpKind>,
    /// Dense-equivalent FLOPs summed over every call.
    pub flops: u64,
    pub calls: u64,
    /// Additions actually performed by spike-gated kernels.
    pub executed: u64,
}

/// Per-op counter filled in by an instrumented forward pass.
#[derive(Clone, Debug, Default)]
pub struct OpTally {
    pub entries: BTreeMap<String, TallyEntry>,
}

impl OpTally {
    pub fn record(&mut self, name: &str, kind: OpKind, flops: u64) {
        let e = self.entries.entry(name.to_string()).or_default();
        e.kind = Some(kind);
        e.flops += flops;
        e.calls += 1;
    }

    pub fn record_executed(&mut self, name: &str, adds: u64) {
        self.entries.entry(name.to_string()).or_default().executed += adds;
    }

    pub fn get(&self, name: &str) -> Option<&TallyEntry> {
        self.entries.get(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// pJ per accumulate.
    pub e_ac: f64,
    /// pJ per multiply-accumulate.
    pub e_mac: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        Self {
            e_ac: 0.9,
            e_mac: 4.5,
        }
    }
}

/// One profiled op before energy is attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub flops: u64,
    pub kind: OpKind,
    /// Time steps; AC only.
    pub steps: Option<usize>,
    /// Firing rate of the spike input; AC only.
    pub rate: Option<f64>,
}

impl LayerCost {
    pub fn ac(name: impl Into<String>, flops: u64, steps: usize, rate: f64) -> Self {
        Self {
            name: name.into(),
            flops,
            kind: OpKind::Ac,
            steps: Some(steps),
            rate: Some(rate),
        }
    }

    pub fn mac(name: impl Into<String>, flops: u64) -> Self {
        Self {
            name: name.into(),
            flops,
            kind: OpKind::Mac,
            steps: None,
            rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    pub flops: u64,
    pub kind: OpKind,
    pub steps: Option<usize>,
    pub rate: Option<f64>,
    pub energy_pj: f64,
    /// The same FLOPs charged as full-precision MACs.
    pub ann_energy_pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub layers: Vec<LayerEnergy>,
    pub e_snn_mj: f64,
    pub e_ann_mj: f64,
    pub params_mb: f64,
    pub distortion: Option<f64>,
    /// FLOP-weighted mean firing rate over AC rows.
    pub mean_rate: Option<f64>,
}

const PJ_PER_MJ: f64 = 1e9;

pub fn energy(records: &[LayerCost], c: &CostConstants) -> Result<EnergyReport> {
    if !(c.e_ac > 0.0 && c.e_mac > 0.0) {
        return Err(Error::Invalid("energy constants must be positive".into()));
    }
    let mut layers = Vec::with_capacity(records.len());
    let (mut snn, mut ann) = (0.0, 0.0);
    let (mut rate_num, mut rate_den) = (0.0, 0.0);
    for r in records {
        let ann_pj = c.e_mac * r.flops as f64;
        let (pj, steps, rate) = match r.kind {
            OpKind::Ac => {
                let rate = r.rate.ok_or_else(|| Error::MissingRate(r.name.clone()))?;
                let steps = r.steps.ok_or_else(|| Error::MissingRate(r.name.clone()))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Invalid(format!(
                        "rate {rate} of {} outside [0, 1]",
                        r.name
                    )));
                }
                rate_num += rate * r.flops as f64;
                rate_den += r.flops as f64;
                (
                    c.e_ac * r.flops as f64 * steps as f64 * rate,
                    Some(steps),
                    Some(rate),
                )
            }
            OpKind::Mac => (ann_pj, None, None),
        };
        snn += pj;
        ann += ann_pj;
        layers.push(LayerEnergy {
            name: r.name.clone(),
            flops: r.flops,
            kind: r.kind,
            steps,
            rate,
            energy_pj: pj,
            ann_energy_pj: ann_pj,
        });
    }
    Ok(EnergyReport {
        layers,
        e_snn_mj: snn / PJ_PER_MJ,
        e_ann_mj: ann / PJ_PER_MJ,
        params_mb: 0.0,
        distortion: None,
        mean_rate: (rate_den > 0.0).then(|| rate_num / rate_den),
    })
}

impl EnergyReport {
    /// `E_ann / E_snn`.
    pub fn ratio(&self) -> f64 {
        self.e_ann_mj / self.e_snn_mj
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// Sum of the AC rows, in pJ.
    pub fn ac_energy_pj(&self) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.kind == OpKind::Ac)
            .map(|l| l.energy_pj)
            .sum()
    }

    /// Totals recomputed from the rows agree with the stored totals.
    pub fn is_consistent(&self, rel: f64) -> bool {
        let snn: f64 = self.layers.iter().map(|l| l.energy_pj).sum::<f64>() / PJ_PER_MJ;
        let ann: f64 = self.layers.iter().map(|l| l.ann_energy_pj).sum::<f64>() / PJ_PER_MJ;
        let close =
            |a: f64, b: f64| (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        close(snn, self.e_snn_mj) && close(ann, self.e_ann_mj)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,flops,T,rate,energy_pJ,ann_energy_pJ\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.name,
                l.kind,
                l.flops,
                opt(l.steps.map(|t| t.to_string())),
                opt(l.rate.map(|r| r.to_string())),
                l.energy_pj,
                l.ann_energy_pj
            );
        }
        let _ = writeln!(
            s,
            "TOTAL,,{},,{},{},{}",
            self.total_flops(),
            opt(self.mean_rate.map(|r| r.to_string())),
            self.e_snn_mj * PJ_PER_MJ,
            self.e_ann_mj * PJ_PER_MJ
        );
        s
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 6]> = vec![[
            "layer".into(),
            "kind".into(),
            "FLOPs".into(),
            "T".into(),
            "rate".into(),
            "energy (pJ)".into(),
        ]];
        for l in &self.layers {
            rows.push([
                l.name.clone(),
                l.kind.to_string(),
                l.flops.to_string(),
                l.steps.map_or("-".into(), |t| t.to_string()),
                l.rate.map_or("-".into(), |r| format!("{r:.4}")),
                format!("{:.1}", l.energy_pj),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| {
                    if i == 0 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(s, "E_snn  {:.6e} mJ", self.e_snn_mj);
        let _ = writeln!(s, "E_ann  {:.6e} mJ", self.e_ann_mj);
        let _ = writeln!(s, "ratio  {:.3}x", self.ratio());
        if let Some(r) = self.mean_rate {
            let _ = writeln!(s, "mean rate  {r:.4}");
        }
        let _ = writeln!(s, "params  {:.4} MB", self.params_mb);
        if let Some(d) = self.distortion {
            let _ = writeln!(s, "distortion  {d:.6}");
        }
        s
    }
}

/// `(1/N)·Σ_u Σ_t ‖h_u^t − s_u^t‖₂`.
pub fn quantization_distortion(full: &[DenseMatrix], spikes: &SpikeTrain) -> Result<f64> {
    if full.len() != spikes.steps() {
        return Err(Error::shape(
            "quantization_distortion steps",
            spikes.steps(),
            full.len(),
        ));
    }
    let (n, d) = (spikes.nodes(), spikes.channels());
    if let Some(m) = full.iter().find(|m| m.shape() != (n, d)) {
        return Err(Error::shape(
            "quantization_distortion",
            format!("{n}x{d}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let mut total = 0.0;
    for (t, h) in full.iter().enumerate() {
        for u in 0..n {
            let sq: f64 = h
                .row(u)
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let diff = v - if spikes.get(t, u, c) { 1.0 } else { 0.0 };
                    diff * diff
                })
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// 32-bit parameters, in units of 10⁶ bytes.
pub fn param_size_mb(num_params: usize) -> f64 {
    4.0 * num_params as f64 / 1e6
}
