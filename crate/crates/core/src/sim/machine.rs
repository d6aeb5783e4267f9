use crate::cost::{layer_durations, stage_unit_rate, CostOptions, ModelConfig, PassDurations};
use crate::error::{Error, Result};
use crate::schedule::{Algorithm, Layout, Method, Pass, PassKind, VocabMode};

/// Devices with one compute and one communication stream each, and the
/// duration of every pass a schedule may contain.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineModel {
    pub layout: Layout,
    /// Forward time per stage, vocabulary work folded in where applicable.
    pub stage_forward: Vec<f64>,
    pub stage_backward: Vec<f64>,
    /// Per-device S and T time for sharded or interlaced vocabularies.
    pub s: f64,
    pub t: f64,
    /// Per-device input-layer time for sharded vocabularies.
    pub input_forward: f64,
    pub input_backward: f64,
    /// Latency of every collective.
    pub collective: f64,
    /// Collectives block the compute stream of every device.
    pub sync_collectives: bool,
}

impl MachineModel {
    pub fn new(method: Method, cfg: &ModelConfig, d: &PassDurations) -> Result<Self> {
        let layout = Layout::new(method, cfg)?;
        let mut fwd: Vec<f64> = layout.stages.iter().map(|s| s.layers as f64 * d.layer_forward).collect();
        let mut bwd: Vec<f64> = layout.stages.iter().map(|s| s.layers as f64 * d.layer_backward()).collect();
        let last = layout.last_stage();
        let p = cfg.p as f64;
        // sharded layers pay for the padded vocabulary
        let pad = cfg.padded_vocab() as f64 / cfg.v as f64;
        let (mut s, mut t, mut inf, mut inb) = (0.0, 0.0, 0.0, 0.0);
        match layout.vocab {
            VocabMode::Folded => {
                fwd[0] += d.input_forward;
                bwd[0] += d.input_backward;
                fwd[last] += d.output_forward;
                bwd[last] += d.output_backward;
            }
            VocabMode::Sharded(alg) => {
                let (s_all, t_all) = match alg {
                    Algorithm::TwoBarrier => (d.s_alg1, d.t_alg1),
                    Algorithm::OneBarrier => (d.s_alg2, d.t_alg2),
                };
                s = s_all * pad / p;
                t = t_all * pad / p;
                inf = d.input_forward / p;
                inb = d.input_backward / p;
            }
            VocabMode::Interlaced => {
                // the input layer joins the synchronous vocabulary phase
                s = (d.s_alg1 * pad + d.input_forward) / p;
                t = (d.t_alg1 * pad + d.input_backward) / p;
            }
        }
        let machine = MachineModel {
            layout,
            stage_forward: fwd,
            stage_backward: bwd,
            s,
            t,
            input_forward: inf,
            input_backward: inb,
            collective: d.collective,
            sync_collectives: method.synchronous_collectives(),
        };
        machine.check()?;
        Ok(machine)
    }

    /// Durations normalized so that `L/p` transformer layers take one time unit forward.
    pub fn from_config(method: Method, cfg: &ModelConfig) -> Result<Self> {
        Self::with_options(method, cfg, &CostOptions::default())
    }

    pub fn with_options(method: Method, cfg: &ModelConfig, opts: &CostOptions) -> Result<Self> {
        let d = layer_durations(cfg, stage_unit_rate(cfg), opts)?;
        Self::new(method, cfg, &d)
    }

    fn check(&self) -> Result<()> {
        let all = self
            .stage_forward
            .iter()
            .chain(&self.stage_backward)
            .chain([&self.s, &self.t, &self.input_forward, &self.input_backward, &self.collective]);
        for &v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("durations must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn devices(&self) -> usize {
        self.layout.devices
    }

    pub fn duration(&self, pass: &Pass) -> f64 {
        let stage = || {
            self.layout
                .stage_of(pass.device, pass.chunk)
                .expect("pass refers to a stage of this layout")
        };
        match pass.kind {
            PassKind::F => self.stage_forward[stage()],
            PassKind::B => self.stage_backward[stage()],
            PassKind::S => self.s,
            PassKind::T => self.t,
            PassKind::InF => self.input_forward,
            PassKind::InB => self.input_backward,
            _ => self.collective,
        }
    }

    /// Compute time one microbatch costs `device`.
    pub fn device_load(&self, device: usize) -> f64 {
        let mut load: f64 = self
            .layout
            .stages
            .iter()
            .enumerate()
            .filter(|(_, s)| s.device == device)
            .map(|(i, _)| self.stage_forward[i] + self.stage_backward[i])
            .sum();
        if self.layout.has_output_passes() {
            load += self.s + self.t;
        }
        if self.layout.sharded_input() {
            load += self.input_forward + self.input_backward;
        }
        load
    }
}
