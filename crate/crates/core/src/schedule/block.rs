//! Building blocks on the unit grid (F = 1, B = 2) and their memory analysis.

use super::build::{periodic_block, vhalf_items, vhalf_periodic, Item};
use super::layout::Layout;
use super::method::Method;
use super::pass::{Node, Pass, PassKind};
use crate::cost::ModelConfig;
use crate::error::{Error, Result};
use crate::sim::MachineModel;

/// Offset of every pass of one microbatch, plus the repetition period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildingBlock {
    pub entries: Vec<(Pass, i64)>,
    /// Grid units per microbatch.
    pub interval: i64,
    /// Grid units from a microbatch's first forward to its last backward on
    /// the critical device.
    pub lifespan: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockAnalysis {
    pub lifespan: i64,
    pub interval: i64,
    pub peak_microbatches: i64,
}

/// Peak activation memory in microbatches: lifespan over interval, rounded up.
pub fn analyze_block(block: &BuildingBlock) -> Result<BlockAnalysis> {
    if block.interval <= 0 {
        return Err(Error::ZeroInterval);
    }
    if block.lifespan <= 0 {
        return Err(Error::InvalidConfig(format!("lifespan must be positive, got {}", block.lifespan)));
    }
    Ok(BlockAnalysis {
        lifespan: block.lifespan,
        interval: block.interval,
        peak_microbatches: (block.lifespan + block.interval - 1) / block.interval,
    })
}

// Synchronous phases get a vanishing width so that they order passes
// without shifting them off the grid.
const SYNC_WIDTH: f64 = 1e-6;

fn grid_machine(method: Method, p: usize) -> Result<MachineModel> {
    let cfg = ModelConfig { b: 1, s: 1, h: 1, v: 2 * p, l: method.chunks() * p, p, n: p };
    let layout = Layout::new(method, &cfg)?;
    let stages = layout.stages.len();
    let sync = method.synchronous_collectives();
    Ok(MachineModel {
        layout,
        stage_forward: vec![1.0; stages],
        stage_backward: vec![2.0; stages],
        s: 0.0,
        t: 0.0,
        input_forward: 0.0,
        input_backward: 0.0,
        collective: if sync { SYNC_WIDTH / 3.0 } else { 0.0 },
        sync_collectives: sync,
    })
}

fn grid(t: f64) -> i64 {
    t.round() as i64
}

/// Building block of `method` on `p` devices.
///
/// For V-Half each chunk's lifespan counts for half, since a chunk holds half
/// of a stage's activations. When no periodic V-Half block fits the memory
/// cap the greedy schedule is used; its block is a steady-state microbatch and
/// the interval is the measured steady-state period.
pub fn building_block(method: Method, p: usize) -> Result<BuildingBlock> {
    if p == 0 {
        return Err(Error::InvalidConfig("p must be at least 1".into()));
    }
    let machine = grid_machine(method, p)?;
    let (items, interval, mb) = match method {
        Method::VHalfBase | Method::VHalfVocab1 => match vhalf_periodic(&machine) {
            Some(b) => (b.items, b.period, 0),
            None => {
                let items = vhalf_items(&machine, 6 * p)?;
                let f0 = |m: usize| {
                    items
                        .iter()
                        .find(|it| it.node == Node::compute(PassKind::F, 0, m, 0))
                        .map(|it| it.start)
                        .expect("every forward is placed")
                };
                let interval = (f0(4 * p) - f0(2 * p)) / (2 * p) as f64;
                (items, interval, 3 * p)
            }
        },
        _ => {
            let b = periodic_block(&machine);
            (b.items, b.period, 0)
        }
    };
    let own: Vec<&Item> = items.iter().filter(|it| it.node.microbatch == mb).collect();
    let origin = own.iter().map(|it| it.start).fold(f64::INFINITY, f64::min);
    let mut entries = Vec::new();
    for it in &own {
        let offset = grid(it.start - origin);
        match it.node.device {
            Some(d) => entries.push((it.node.on(d), offset)),
            None => entries.extend((0..p).map(|d| (it.node.on(d), offset))),
        }
    }
    entries.sort_by_key(|&(pass, off)| (off, pass));

    let end_of = |kind: PassKind, d: usize, chunk: usize| {
        own.iter()
            .find(|it| it.node.kind == kind && it.node.device == Some(d) && it.node.chunk == chunk)
            .map(|it| it.start + if kind == PassKind::F { machine.stage_forward[0] } else { machine.stage_backward[0] })
    };
    let start_of = |d: usize, chunk: usize| {
        own.iter()
            .find(|it| it.node.kind == PassKind::F && it.node.device == Some(d) && it.node.chunk == chunk)
            .map(|it| it.start)
    };
    let chunks = method.chunks();
    let mut lifespan: f64 = 0.0;
    for d in 0..p {
        let mut span = 0.0;
        for c in 0..chunks {
            if let (Some(f), Some(b)) = (start_of(d, c), end_of(PassKind::B, d, c)) {
                span += (b - f) / chunks as f64;
            }
        }
        lifespan = lifespan.max(span);
    }
    Ok(BuildingBlock { entries, interval: grid(interval), lifespan: grid(lifespan) })
}
