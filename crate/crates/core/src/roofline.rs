//! Analytic roofline model: FLOPs, memory traffic, arithmetic intensity and
//! the resulting bound classification for each weight structure.
//!
//! The byte model charges, per layer application: the activations in and
//! out, every weight array once, and the method's unavoidable intermediate
//! traffic (each intermediate written once and read once at whole-array
//! granularity, assuming the memory-optimal dataflow for dense/low-rank and
//! the straightforward staged dataflow for the blocked methods). Counted
//! stage traffic from an actual run can be compared against these numbers;
//! fused executors beat the model, baseline ones may exceed it by the
//! shuffle copies the model leaves out.

use crate::formats::{Method, WorkloadSpec};

/// Throughput envelope of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareProfile {
    pub name: String,
    pub peak_flops: f64,
    pub mem_bandwidth_bytes_per_s: f64,
}

impl HardwareProfile {
    pub fn new(name: &str, peak_flops: f64, mem_bandwidth_bytes_per_s: f64) -> Self {
        HardwareProfile {
            name: name.to_string(),
            peak_flops,
            mem_bandwidth_bytes_per_s,
        }
    }

    /// Intensity at which the machine balances: peak / bandwidth.
    pub fn ridge_intensity(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth_bytes_per_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundClass {
    ComputeBound,
    MemoryBound,
}

impl BoundClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundClass::ComputeBound => "compute",
            BoundClass::MemoryBound => "memory",
        }
    }
}

/// Multiply-add FLOPs for one forward application of the layer.
pub fn model_flops(spec: &WorkloadSpec) -> u64 {
    let (n, i, o, r, b) = dims(spec);
    match spec.method {
        Method::Dense => 2 * n * i * o,
        Method::LowRank | Method::Monarch => 2 * n * r * (i + o),
        Method::Blast => 2 * n * r * (i + o + b * b),
    }
}

/// Modeled bytes moved for one forward application.
pub fn model_bytes(spec: &WorkloadSpec, elem_bytes: u32) -> u64 {
    let (n, i, o, r, b) = dims(spec);
    let elems = match spec.method {
        Method::Dense => n * i + i * o + n * o,
        Method::LowRank => n * i + i * r + r * o + n * o + 2 * n * r,
        Method::Monarch => n * i + i * r + r * o + n * o + 4 * b * n * r,
        Method::Blast => n * i + i * r + r * o + r * b * b + n * o + 8 * b * n * r,
    };
    elems * elem_bytes as u64
}

fn dims(spec: &WorkloadSpec) -> (u64, u64, u64, u64, u64) {
    (
        spec.n as u64,
        spec.i as u64,
        spec.o as u64,
        spec.r as u64,
        spec.b as u64,
    )
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub flops: u64,
    pub bytes: u64,
    pub alpha: f64,
    pub bound: BoundClass,
    pub est_runtime_s: f64,
}

pub fn classify(alpha: f64, profile: &HardwareProfile) -> BoundClass {
    if alpha >= profile.ridge_intensity() {
        BoundClass::ComputeBound
    } else {
        BoundClass::MemoryBound
    }
}

pub fn estimate_runtime_s(flops: u64, bytes: u64, profile: &HardwareProfile) -> f64 {
    (flops as f64 / profile.peak_flops)
        .max(bytes as f64 / profile.mem_bandwidth_bytes_per_s)
}

pub fn cost_report(
    spec: &WorkloadSpec,
    elem_bytes: u32,
    profile: &HardwareProfile,
) -> CostReport {
    let flops = model_flops(spec);
    let bytes = model_bytes(spec, elem_bytes);
    let alpha = flops as f64 / bytes as f64;
    CostReport {
        flops,
        bytes,
        alpha,
        bound: classify(alpha, profile),
        est_runtime_s: estimate_runtime_s(flops, bytes, profile),
    }
}
