use std::fmt::Write as _;

use super::timeline::Timeline;
use crate::cost::{stage_unit_rate, CostTable, ModelConfig};
use crate::schedule::{Algorithm, Layout, Node, PassKind, VocabMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsOptions {
    /// Activation bytes per transformer layer per microbatch.
    pub act_bytes_per_layer: f64,
    pub bytes_per_param: f64,
    /// Bytes per element of the buffers kept between S and T.
    pub buffer_bytes_per_element: f64,
    /// FLOPs per simulated time unit on one device.
    pub unit_rate: f64,
}

impl MetricsOptions {
    /// 34·b·s·h activation bytes per layer, 2-byte parameters and buffers,
    /// and the time unit of [`crate::sim::MachineModel::from_config`].
    pub fn for_config(cfg: &ModelConfig) -> Self {
        MetricsOptions {
            act_bytes_per_layer: 34.0 * (cfg.b * cfg.s * cfg.h) as f64,
            bytes_per_param: 2.0,
            buffer_bytes_per_element: 2.0,
            unit_rate: stage_unit_rate(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMetrics {
    pub device: usize,
    pub busy: f64,
    pub idle: f64,
    pub bubble_ratio: f64,
    /// Microbatches whose activations are held, counted in whole stages.
    pub peak_inflight: usize,
    pub peak_bytes: f64,
    pub param_bytes: f64,
    /// Most input-layer outputs held at once.
    pub peak_input_buffers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub devices: Vec<DeviceMetrics>,
    pub makespan: f64,
    pub mfu: f64,
}

pub const CSV_HEADER: &str = "device,busy,idle,bubble_ratio,peak_inflight,peak_bytes,mfu";

impl Metrics {
    pub fn max_peak_inflight(&self) -> usize {
        self.devices.iter().map(|d| d.peak_inflight).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for d in &self.devices {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{:.0},{:.6}",
                d.device, d.busy, d.idle, d.bubble_ratio, d.peak_inflight, d.peak_bytes, self.mfu
            );
        }
        out
    }
}

/// Running maximum of a sum of `(time, delta)` steps; at equal times
/// releases apply before acquisitions.
fn peak_of(mut events: Vec<(f64, f64)>) -> f64 {
    events.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let (mut cur, mut peak) = (0.0, 0.0_f64);
    for (_, delta) in events {
        cur += delta;
        peak = peak.max(cur);
    }
    peak
}

/// Parameter elements resident on `device`.
pub fn device_params(layout: &Layout, cfg: &ModelConfig, device: usize) -> f64 {
    let table = CostTable::new(cfg);
    let layers: usize = layout.stages.iter().filter(|s| s.device == device).map(|s| s.layers).sum();
    let mut params = layers as f64 * table.transformer.params;
    let (h, p) = (cfg.h as f64, cfg.p as f64);
    match layout.vocab {
        VocabMode::Folded => {
            if layout.stages[0].device == device {
                params += table.input.params;
            }
            if layout.stages[layout.last_stage()].device == device {
                params += table.output.params;
            }
        }
        _ => params += 4.0 * h * cfg.padded_vocab() as f64 / p,
    }
    if device == layout.stages[0].device {
        // positional embedding
        params += (cfg.s * cfg.h) as f64;
    }
    params
}

pub fn metrics(timeline: &Timeline, layout: &Layout, cfg: &ModelConfig, opts: &MetricsOptions) -> Metrics {
    let p = layout.devices;
    let chunks = layout.chunks();
    let table = CostTable::new(cfg);
    let total_flops =
        cfg.n as f64 * (cfg.l as f64 * table.transformer.flops + table.input.flops + table.output.flops);
    let mfu = if timeline.makespan > 0.0 {
        total_flops / (p as f64 * timeline.makespan * opts.unit_rate)
    } else {
        0.0
    };
    let tokens = (cfg.b * cfg.s) as f64;
    let mut buffer = tokens * (cfg.padded_vocab() as f64 / p as f64);
    if layout.vocab == VocabMode::Sharded(Algorithm::OneBarrier) {
        buffer += 2.0 * tokens * cfg.h as f64;
    }
    buffer *= opts.buffer_bytes_per_element;

    let starts = timeline.start_times();
    let ends = timeline.end_times();
    let first = layout.stages[0];

    let devices = (0..p)
        .map(|d| {
            let busy = timeline.busy(d);
            let (lo, hi) = timeline.active_span(d).unwrap_or((0.0, 0.0));
            let span = hi - lo;
            let idle = (span - busy).max(0.0);
            let bubble_ratio = if span > 0.0 { idle / span } else { 0.0 };

            let mut counts = Vec::new();
            let mut bytes = Vec::new();
            let mut inputs = Vec::new();
            for r in timeline.compute(d) {
                let stage = || layout.stage_of(d, r.pass.chunk).map(|s| layout.stages[s].layers).unwrap_or(0);
                match r.pass.kind {
                    PassKind::F => {
                        counts.push((r.start, 1.0));
                        bytes.push((r.start, opts.act_bytes_per_layer * stage() as f64));
                    }
                    PassKind::B => {
                        counts.push((r.end, -1.0));
                        bytes.push((r.end, -opts.act_bytes_per_layer * stage() as f64));
                    }
                    PassKind::S => bytes.push((r.start, buffer)),
                    PassKind::T => bytes.push((r.end, -buffer)),
                    PassKind::InF => {
                        let m = r.pass.microbatch;
                        let release = if d == first.device {
                            starts.get(&Node::compute(PassKind::F, d, m, first.chunk)).copied()
                        } else {
                            ends.get(&Node::collective(PassKind::InAR, m)).copied()
                        };
                        inputs.push((r.start, 1.0));
                        inputs.push((release.unwrap_or(timeline.makespan), -1.0));
                    }
                    _ => {}
                }
            }
            let raw = peak_of(counts).round() as usize;
            let param_bytes = device_params(layout, cfg, d) * opts.bytes_per_param;
            DeviceMetrics {
                device: d,
                busy,
                idle,
                bubble_ratio,
                peak_inflight: raw.div_ceil(chunks),
                peak_bytes: peak_of(bytes) + param_bytes,
                param_bytes,
                peak_input_buffers: peak_of(inputs).round() as usize,
            }
        })
        .collect();
    Metrics { devices, makespan: timeline.makespan, mfu }
}
