//! Analytic parameter and multiply-add counts.

use std::fmt;

use crate::nn::ModelConfig;

/// Relative overheads quoted for the structural branch in the original work, shown for
/// comparison only.
pub const REFERENCE_FLOP_OVERHEAD: f64 = 0.153;
pub const REFERENCE_PARAM_OVERHEAD: f64 = 0.091;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Complexity {
    pub params: usize,
    /// Multiply-adds of one forward pass over one sample.
    pub flops: u64,
}

/// Input geometry the counts are evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub frames: usize,
    pub joints: usize,
    pub bodies: usize,
}

impl Default for InputShape {
    fn default() -> Self {
        Self { frames: 64, joints: 25, bodies: 2 }
    }
}

/// Counts for `cfg`. FLOPs include the graph products, channel mixing, temporal and
/// projection convolutions and the classifier; normalization, activations and pooling
/// are left out.
pub fn count_params_flops(cfg: &ModelConfig, input: InputShape) -> Complexity {
    let k = cfg.max_hop + 1;
    let v = input.joints;
    let mut params = 2 * cfg.in_channels;
    let mut flops: u64 = 0;
    let mut c_in = cfg.in_channels;
    let mut t = input.frames;
    for (i, stage) in cfg.plan.0.iter().enumerate() {
        let c_out = stage.width;
        let t_out = (t.max(1) - 1) / stage.stride + 1;
        params += k * c_out * c_in + k * v * v + 2 * c_out;
        flops += (k * (c_in * t * v * v + c_out * c_in * t * v)) as u64;
        if cfg.structural {
            params += c_out * c_in;
            flops += (c_in * t * v * v + c_out * c_in * t * v) as u64;
        }
        params += c_out * c_out * cfg.kernel + c_out;
        flops += (c_out * c_out * cfg.kernel * t_out * v) as u64;
        if i > 0 && (c_in != c_out || stage.stride != 1) {
            params += c_out * c_in + 2 * c_out;
            flops += (c_out * c_in * t_out * v) as u64;
        }
        c_in = c_out;
        t = t_out;
    }
    flops *= input.bodies as u64;
    params += c_in * cfg.classes + cfg.classes;
    flops += (c_in * cfg.classes) as u64;
    Complexity { params, flops }
}

/// `Σ C_in·C_out` over the layers: the parameters the structural branch adds.
pub fn structural_param_count(cfg: &ModelConfig) -> usize {
    let mut c_in = cfg.in_channels;
    let mut total = 0;
    for stage in &cfg.plan.0 {
        total += c_in * stage.width;
        c_in = stage.width;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub sp: Complexity,
    pub spst: Complexity,
    pub structural_params: usize,
}

impl ComplexityReport {
    pub fn new(cfg: &ModelConfig, input: InputShape) -> Self {
        let sp = count_params_flops(&ModelConfig { structural: false, ..cfg.clone() }, input);
        let spst = count_params_flops(&ModelConfig { structural: true, ..cfg.clone() }, input);
        Self { sp, spst, structural_params: structural_param_count(cfg) }
    }

    pub fn param_overhead(&self) -> f64 {
        (self.spst.params - self.sp.params) as f64 / self.sp.params as f64
    }

    pub fn flop_overhead(&self) -> f64 {
        (self.spst.flops - self.sp.flops) as f64 / self.sp.flops as f64
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12} {:>16}", "model", "params", "MACs/sample")?;
        writeln!(f, "{:<10} {:>12} {:>16}", "Sp-GCN", self.sp.params, self.sp.flops)?;
        writeln!(f, "{:<10} {:>12} {:>16}", "SpSt-GCN", self.spst.params, self.spst.flops)?;
        writeln!(
            f,
            "structural branch: +{} params (sum of C_in*C_out = {}), params +{:.1}%, FLOPs +{:.1}%",
            self.spst.params - self.sp.params,
            self.structural_params,
            100.0 * self.param_overhead(),
            100.0 * self.flop_overhead()
        )?;
        write!(
            f,
            "reference figures: FLOPs +{:.1}%, params +{:.1}% (block internals differ; not expected to match)",
            100.0 * REFERENCE_FLOP_OVERHEAD,
            100.0 * REFERENCE_PARAM_OVERHEAD
        )
    }
}
