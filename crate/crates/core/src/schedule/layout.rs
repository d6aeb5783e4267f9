use super::method::{Method, VocabMode};
use super::redistribute::redistribute_layers;
use crate::cost::ModelConfig;
use crate::error::{Error, Result};

/// A contiguous group of transformer layers hosted as one chunk of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub device: usize,
    pub chunk: usize,
    pub layers: usize,
}

/// Placement of stages and vocabulary layers on devices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub devices: usize,
    /// In forward order.
    pub stages: Vec<Stage>,
    pub vocab: VocabMode,
}

impl Layout {
    pub fn new(method: Method, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.p;
        let uniform = |parts: usize| -> Result<usize> {
            if !cfg.l.is_multiple_of(parts) {
                return Err(Error::UnevenStages { layers: cfg.l, stages: parts });
            }
            Ok(cfg.l / parts)
        };
        let stages = match method {
            Method::Redis => redistribute_layers(cfg)
                .layers_per_stage
                .into_iter()
                .enumerate()
                .map(|(d, layers)| Stage { device: d, chunk: 0, layers })
                .collect(),
            Method::VHalfBase | Method::VHalfVocab1 => {
                let layers = uniform(2 * p)?;
                (0..2 * p)
                    .map(|s| {
                        let (device, chunk) = if s < p { (s, 0) } else { (2 * p - 1 - s, 1) };
                        Stage { device, chunk, layers }
                    })
                    .collect()
            }
            _ => {
                let layers = uniform(p)?;
                (0..p).map(|d| Stage { device: d, chunk: 0, layers }).collect()
            }
        };
        Ok(Layout { devices: p, stages, vocab: method.vocab_mode() })
    }

    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn stage_of(&self, device: usize, chunk: usize) -> Option<usize> {
        self.stages.iter().position(|s| s.device == device && s.chunk == chunk)
    }

    pub fn chunks(&self) -> usize {
        self.stages.iter().map(|s| s.chunk + 1).max().unwrap_or(1)
    }

    /// Whether S/T passes and the output collectives exist.
    pub fn has_output_passes(&self) -> bool {
        !matches!(self.vocab, VocabMode::Folded)
    }

    /// Whether the input layer runs as sharded InF/InB passes.
    pub fn sharded_input(&self) -> bool {
        matches!(self.vocab, VocabMode::Sharded(_))
    }

    /// Whether the C2 reduce exists.
    pub fn has_reduce(&self) -> bool {
        matches!(
            self.vocab,
            VocabMode::Interlaced | VocabMode::Sharded(super::method::Algorithm::TwoBarrier)
        )
    }
}
