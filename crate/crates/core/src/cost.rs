//! Model shape and the analytical compute / parameter-memory cost model.
//!
//! FLOP counts are per microbatch and cover forward plus backward work.
//! Parameter figures are element counts; multiply by
//! [`CostOptions::bytes_per_param`] for bytes.

use crate::error::{Error, Result};

/// Shape of the model and of the pipeline that trains it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Microbatch size in sequences.
    pub b: usize,
    /// Sequence length in tokens.
    pub s: usize,
    /// Hidden dimension.
    pub h: usize,
    /// Vocabulary size (unpadded).
    pub v: usize,
    /// Transformer layer count.
    pub l: usize,
    /// Pipeline devices.
    pub p: usize,
    /// Microbatches per iteration.
    pub n: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            b: 1,
            s: 2048,
            h: 4096,
            v: 128_000,
            l: 32,
            p: 8,
            n: 64,
        }
    }
}

impl ModelConfig {
    pub fn new(b: usize, s: usize, h: usize, v: usize, l: usize, p: usize, n: usize) -> Result<Self> {
        let cfg = ModelConfig { b, s, h, v, l, p, n };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field must be at least one.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("b", self.b),
            ("s", self.s),
            ("h", self.h),
            ("V", self.v),
            ("L", self.l),
            ("p", self.p),
            ("n", self.n),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Tokens per microbatch.
    pub fn tokens(&self) -> usize {
        self.b * self.s
    }

    /// Vocabulary padded for sharding over `p` devices.
    pub fn padded_vocab(&self) -> usize {
        pad_vocab_size(self.v, self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Transformer,
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCost {
    pub flops: f64,
    pub params: f64,
}

/// Per-microbatch FLOPs and parameter count of one layer.
pub fn layer_cost(kind: LayerKind, cfg: &ModelConfig) -> LayerCost {
    let (b, s, h, v) = (cfg.b as f64, cfg.s as f64, cfg.h as f64, cfg.v as f64);
    match kind {
        LayerKind::Transformer => LayerCost {
            flops: b * s * h * (72.0 * h + 12.0 * s),
            params: 24.0 * h * h,
        },
        LayerKind::Input => LayerCost {
            flops: 3.0 * b * s * h,
            params: 2.0 * h * v,
        },
        LayerKind::Output => LayerCost {
            flops: 6.0 * b * s * h * v,
            params: 2.0 * h * v,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTable {
    pub transformer: LayerCost,
    pub input: LayerCost,
    pub output: LayerCost,
}

impl CostTable {
    pub fn new(cfg: &ModelConfig) -> Self {
        CostTable {
            transformer: layer_cost(LayerKind::Transformer, cfg),
            input: layer_cost(LayerKind::Input, cfg),
            output: layer_cost(LayerKind::Output, cfg),
        }
    }

    pub fn get(&self, kind: LayerKind) -> LayerCost {
        match kind {
            LayerKind::Transformer => self.transformer,
            LayerKind::Input => self.input,
            LayerKind::Output => self.output,
        }
    }
}

/// Output layer cost relative to one transformer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRatios {
    pub compute: f64,
    pub memory: f64,
}

pub fn cost_ratios(cfg: &ModelConfig) -> CostRatios {
    let (s, h, v) = (cfg.s as f64, cfg.h as f64, cfg.v as f64);
    CostRatios {
        compute: 6.0 * v / (72.0 * h + 12.0 * s),
        memory: v / (12.0 * h),
    }
}

/// Smallest multiple of `2p` that is at least `v`.
pub fn pad_vocab_size(v: usize, p: usize) -> usize {
    let step = 2 * p.max(1);
    v.div_ceil(step) * step
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostOptions {
    /// Bytes per parameter element.
    pub bytes_per_param: f64,
    /// Collective latency as a fraction of the stage forward time.
    pub collective_fraction: f64,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            bytes_per_param: 2.0,
            collective_fraction: 0.1,
        }
    }
}

/// Fraction of the output layer's FLOPs spent in the S pass; T gets the rest.
pub const ALG1_S_FRACTION: f64 = 1.0 / 3.0;
pub const ALG2_S_FRACTION: f64 = 3.0 / 5.0;

/// Simulated durations derived from the cost table.
///
/// The vocabulary entries describe the whole, unsharded layer; a schedule that
/// shards the vocabulary divides them by the device count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassDurations {
    /// One transformer layer, forward.
    pub layer_forward: f64,
    /// `L/p` layers, forward.
    pub forward: f64,
    /// `L/p` layers, backward.
    pub backward: f64,
    pub output_forward: f64,
    pub output_backward: f64,
    pub input_forward: f64,
    pub input_backward: f64,
    pub s_alg1: f64,
    pub t_alg1: f64,
    pub s_alg2: f64,
    pub t_alg2: f64,
    pub collective: f64,
}

impl PassDurations {
    /// Total output layer time (forward plus backward).
    pub fn output_total(&self) -> f64 {
        self.output_forward + self.output_backward
    }

    pub fn input_total(&self) -> f64 {
        self.input_forward + self.input_backward
    }

    /// Backward time of one transformer layer.
    pub fn layer_backward(&self) -> f64 {
        2.0 * self.layer_forward
    }
}

/// FLOPs of `L/p` transformer layers; using it as the unit rate makes F = 1.
pub fn stage_unit_rate(cfg: &ModelConfig) -> f64 {
    cfg.l as f64 / cfg.p as f64 * layer_cost(LayerKind::Transformer, cfg).flops
}

pub fn pass_durations(cfg: &ModelConfig, unit_rate: f64, opts: &CostOptions) -> Result<PassDurations> {
    cfg.validate()?;
    if !cfg.l.is_multiple_of(cfg.p) {
        return Err(Error::UnevenStages { layers: cfg.l, stages: cfg.p });
    }
    layer_durations(cfg, unit_rate, opts)
}

/// Like [`pass_durations`] but accepts any layer count; `forward` and
/// `backward` are then fractional multiples of a layer.
pub fn layer_durations(cfg: &ModelConfig, unit_rate: f64, opts: &CostOptions) -> Result<PassDurations> {
    cfg.validate()?;
    if !unit_rate.is_finite() || unit_rate <= 0.0 {
        return Err(Error::InvalidConfig(format!("unit rate must be positive, got {unit_rate}")));
    }
    let table = CostTable::new(cfg);
    let layer_forward = table.transformer.flops / unit_rate;
    let forward = cfg.l as f64 / cfg.p as f64 * layer_forward;
    let output = table.output.flops / unit_rate;
    let input = table.input.flops / unit_rate;
    Ok(PassDurations {
        layer_forward,
        forward,
        backward: 2.0 * forward,
        output_forward: output / 3.0,
        output_backward: output * 2.0 / 3.0,
        input_forward: input / 3.0,
        input_backward: input * 2.0 / 3.0,
        s_alg1: output * ALG1_S_FRACTION,
        t_alg1: output * (1.0 - ALG1_S_FRACTION),
        s_alg2: output * ALG2_S_FRACTION,
        t_alg2: output * (1.0 - ALG2_S_FRACTION),
        collective: opts.collective_fraction * forward,
    })
}

/// Durations with the stage forward time normalized to 1.
pub fn unit_durations(cfg: &ModelConfig) -> Result<PassDurations> {
    pass_durations(cfg, stage_unit_rate(cfg), &CostOptions::default())
}
