//! Hardware cost accounting for compiled networks.
//!
//! Counts memristors and op-amps (against the conventional dual-array mapping
//! that needs two amplifiers per conv/FC output), estimates worst-case static
//! power and latency, and bins stored weights into a histogram.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceParams;
use crate::error::{Error, Result};
use crate::io::weights::WeightStore;
use crate::pipeline::{CompiledNetwork, Stage};
use crate::reference::Activation;

/// Op-amps per functional block instance. One instance per element it processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpCosts {
    pub relu: usize,
    pub hard_sigmoid: usize,
    pub hard_swish: usize,
    pub adder: usize,
    pub multiplier: usize,
}

impl Default for AmpCosts {
    fn default() -> Self {
        AmpCosts {
            relu: 1,
            hard_sigmoid: 2,
            hard_swish: 3,
            adder: 1,
            multiplier: 1,
        }
    }
}

impl AmpCosts {
    fn activation(&self, kind: Activation) -> usize {
        match kind {
            Activation::Relu => self.relu,
            Activation::HardSigmoid => self.hard_sigmoid,
            Activation::HardSwish => self.hard_swish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub index: usize,
    pub kind: String,
    pub label: String,
    pub memristors: usize,
    pub opamps: usize,
    pub opamps_baseline: usize,
    /// TIAs on conv/FC crossbar columns (the part the sign-inverted mapping halves).
    pub mapped_opamps: usize,
    pub mapped_opamps_baseline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceCount {
    pub memristors: usize,
    pub opamps: usize,
    pub opamps_baseline: usize,
    pub stages: Vec<StageCost>,
}

fn columns(stage: &Stage) -> usize {
    stage.programs().iter().map(|p| p.cols()).sum()
}

pub fn count_resources(net: &CompiledNetwork, costs: &AmpCosts) -> ResourceCount {
    let stages: Vec<StageCost> = net
        .stages
        .iter()
        .enumerate()
        .map(|(index, stage)| {
            let memristors = stage.programs().iter().map(|p| p.memristor_count()).sum();
            // (shared amps, mapped TIAs)
            let (shared, mapped) = match stage {
                Stage::Conv { .. } | Stage::Depthwise { .. } | Stage::Fc { .. } => {
                    (0, columns(stage))
                }
                Stage::Gap { .. } | Stage::BatchNorm { .. } => (columns(stage), 0),
                Stage::Activation { kind, elements } => (costs.activation(*kind) * elements, 0),
                Stage::Residual { elements, .. } => (costs.adder * elements, 0),
                Stage::Se {
                    gap,
                    fc1,
                    fc2,
                    elements,
                    ..
                } => {
                    let pool = gap.program.cols();
                    let gates = fc2.out_features;
                    let shared = pool
                        + costs.relu * fc1.out_features
                        + costs.hard_sigmoid * gates
                        + costs.multiplier * elements;
                    (shared, fc1.program.cols() + fc2.program.cols())
                }
            };
            StageCost {
                index,
                kind: stage.kind().to_owned(),
                label: stage.label(),
                memristors,
                opamps: shared + mapped,
                opamps_baseline: shared + 2 * mapped,
                mapped_opamps: mapped,
                mapped_opamps_baseline: 2 * mapped,
            }
        })
        .collect();
    ResourceCount {
        memristors: stages.iter().map(|s| s.memristors).sum(),
        opamps: stages.iter().map(|s| s.opamps).sum(),
        opamps_baseline: stages.iter().map(|s| s.opamps_baseline).sum(),
        stages,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub v_max: f64,
    pub w_max: f64,
    /// `v_max^2 * w_max * g_unit`, watts.
    pub per_device_w: f64,
    /// Per-device bound times the memristor count, watts.
    pub total_w: f64,
}

/// Worst-case static power: every device at `v_scale` and weight `w_max`.
pub fn estimate_power(net: &CompiledNetwork, dp: &DeviceParams, w_max: f64) -> PowerEstimate {
    let per_device_w = dp.v_scale * dp.v_scale * w_max * dp.g_unit;
    PowerEstimate {
        v_max: dp.v_scale,
        w_max,
        per_device_w,
        total_w: per_device_w * net.memristor_count() as f64,
    }
}

/// Default device response time, seconds.
pub const DEFAULT_T_DEVICE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub t_device: f64,
    /// Overrides the pipeline depth when set.
    pub stage_count: Option<usize>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            t_device: DEFAULT_T_DEVICE,
            stage_count: None,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        if self.t_device <= 0.0 || !self.t_device.is_finite() {
            return Err(Error::Parameter(format!(
                "t_device must be positive, got {}",
                self.t_device
            )));
        }
        if self.stage_count == Some(0) {
            return Err(Error::Parameter("stage_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn stages_for(&self, net: &CompiledNetwork) -> usize {
        self.stage_count.unwrap_or_else(|| net.depth().max(1))
    }
}

pub fn estimate_latency(net: &CompiledNetwork, m: &LatencyModel) -> f64 {
    m.t_device * m.stages_for(net) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges; bins are `[lo, hi)` except the last, which is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// One `lo,hi,count` row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }
}

/// Uniform-width histogram over `[min, max]` of the given values.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Ok(Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            counts: vec![values.len()],
        });
    }
    let mut edges: Vec<f64> = (0..bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    edges.push(hi);
    let interior = &edges[1..bins];
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[interior.partition_point(|&e| e <= v)] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn weight_histogram(store: &WeightStore, bins: usize) -> Result<Histogram> {
    let values: Vec<f64> = store.values().collect();
    histogram(&values, bins)
}

/// Published comparison points printed next to the model's own estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoints {
    pub memristor_power_w: f64,
    pub cmos_power_w: f64,
    pub analog_latency_s: f64,
    pub gpu_latency_s: f64,
}

pub const REFERENCE_POINTS: ReferencePoints = ReferencePoints {
    memristor_power_w: 1.1e-6,
    cmos_power_w: 60e-6,
    analog_latency_s: 1.24e-6,
    gpu_latency_s: 165.4e-6,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub memristor_count: usize,
    pub opamp_count: usize,
    pub opamp_count_baseline: usize,
    /// Conv/FC TIAs over their dual-array baseline.
    pub mapped_opamp_ratio: Option<f64>,
    pub per_device_power_w: f64,
    pub max_power_w: f64,
    pub latency_s: f64,
    pub t_device_s: f64,
    pub stage_count: usize,
    pub weight_histogram: Histogram,
    pub stages: Vec<StageCost>,
    pub reference: ReferencePoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub costs: AmpCosts,
    pub latency: LatencyModel,
    pub w_max: f64,
    pub bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            costs: AmpCosts::default(),
            latency: LatencyModel::default(),
            w_max: 0.2,
            bins: 20,
        }
    }
}

pub fn build_report(
    net: &CompiledNetwork,
    store: &WeightStore,
    opts: &ReportOptions,
) -> Result<CostReport> {
    opts.latency.validate()?;
    let res = count_resources(net, &opts.costs);
    let power = estimate_power(net, &net.dp, opts.w_max);
    let mapped: usize = res.stages.iter().map(|s| s.mapped_opamps).sum();
    let mapped_base: usize = res.stages.iter().map(|s| s.mapped_opamps_baseline).sum();
    Ok(CostReport {
        memristor_count: res.memristors,
        opamp_count: res.opamps,
        opamp_count_baseline: res.opamps_baseline,
        mapped_opamp_ratio: (mapped_base > 0).then(|| mapped as f64 / mapped_base as f64),
        per_device_power_w: power.per_device_w,
        max_power_w: power.total_w,
        latency_s: estimate_latency(net, &opts.latency),
        t_device_s: opts.latency.t_device,
        stage_count: opts.latency.stages_for(net),
        weight_histogram: weight_histogram(store, opts.bins)?,
        stages: res.stages,
        reference: REFERENCE_POINTS,
    })
}

fn micro(x: f64) -> String {
    format!("{} µ", round_sig(x * 1e6))
}

/// Trims float noise from display values (12 significant digits).
fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 12 - x.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits);
    (x * scale).round() / scale
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.reference;
        let _ = writeln!(s, "memristors: {}", self.memristor_count);
        let _ = writeln!(s, "opamps: {}", self.opamp_count);
        let _ = writeln!(s, "opamps_baseline: {}", self.opamp_count_baseline);
        match self.mapped_opamp_ratio {
            Some(ratio) => {
                let _ = writeln!(s, "conv_fc_opamp_ratio: {ratio}");
            }
            None => {
                let _ = writeln!(s, "conv_fc_opamp_ratio: n/a");
            }
        }
        let _ = writeln!(
            s,
            "per_device_max_power: {}W",
            micro(self.per_device_power_w)
        );
        let _ = writeln!(s, "total_max_power: {}W", micro(self.max_power_w));
        let _ = writeln!(
            s,
            "latency: {}s ({} stages x {} ps)",
            micro(self.latency_s),
            self.stage_count,
            round_sig(self.t_device_s * 1e12)
        );
        let _ = writeln!(
            s,
            "reference memristor max power: {}W (model/reference = {})",
            micro(r.memristor_power_w),
            round_sig(self.per_device_power_w / r.memristor_power_w)
        );
        let _ = writeln!(
            s,
            "reference CMOS equivalent power: {}W",
            micro(r.cmos_power_w)
        );
        let _ = writeln!(
            s,
            "reference analog latency: {}s",
            micro(r.analog_latency_s)
        );
        let _ = writeln!(
            s,
            "reference GPU latency (RTX 4090): {}s",
            micro(r.gpu_latency_s)
        );
        let _ = writeln!(s, "stages:");
        for st in &self.stages {
            let _ = writeln!(
                s,
                "  {:>3} {:<14} {:<16} memristors {:>8} opamps {:>6} baseline {:>6}",
                st.index, st.kind, st.label, st.memristors, st.opamps, st.opamps_baseline
            );
        }
        let _ = writeln!(
            s,
            "weight histogram ({} bins):",
            self.weight_histogram.counts.len()
        );
        for (i, c) in self.weight_histogram.counts.iter().enumerate() {
            let e = &self.weight_histogram.edges;
            let close = if i + 1 == self.weight_histogram.counts.len() {
                ']'
            } else {
                ')'
            };
            let _ = writeln!(s, "  [{:+.4}, {:+.4}{close} {c}", e[i], e[i + 1]);
        }
        s
    }
}
