//! Dependency rules shared by the builders, the validator and the simulator.

use super::layout::Layout;
use super::method::{Algorithm, VocabMode};
use super::pass::{Node, Pass, PassKind};

fn stage_node(layout: &Layout, kind: PassKind, stage: usize, mb: usize) -> Node {
    let st = layout.stages[stage];
    Node::compute(kind, st.device, mb, st.chunk)
}

/// Direct predecessors of `node`. Unknown stages yield no dependencies.
pub fn dependencies(layout: &Layout, node: &Node) -> Vec<Node> {
    let m = node.microbatch;
    let p = layout.devices;
    let last = layout.last_stage();
    let stage = || node.device.and_then(|d| layout.stage_of(d, node.chunk));
    let all = |kind: PassKind| (0..p).map(move |d| Node::compute(kind, d, m, 0));
    match node.kind {
        PassKind::F => match stage() {
            Some(0) if layout.sharded_input() => vec![Node::collective(PassKind::InAR, m)],
            Some(0) | None => vec![],
            Some(s) => vec![stage_node(layout, PassKind::F, s - 1, m)],
        },
        PassKind::B => match stage() {
            None => vec![],
            Some(s) if s < last => vec![stage_node(layout, PassKind::B, s + 1, m)],
            Some(s) => match layout.vocab {
                VocabMode::Folded => vec![stage_node(layout, PassKind::F, s, m)],
                VocabMode::Sharded(Algorithm::OneBarrier) => vec![Node::collective(PassKind::C1, m)],
                VocabMode::Sharded(Algorithm::TwoBarrier) | VocabMode::Interlaced => {
                    vec![Node::collective(PassKind::C2, m)]
                }
            },
        },
        PassKind::S => vec![Node::collective(PassKind::C0, m)],
        PassKind::T => vec![Node::collective(PassKind::C1, m)],
        PassKind::C0 => vec![stage_node(layout, PassKind::F, last, m)],
        PassKind::C1 => all(PassKind::S).collect(),
        PassKind::C2 => all(PassKind::T).collect(),
        // two input buffers: microbatch m reuses the slot of m-2 once stage 0 consumed it
        PassKind::InF if m >= 2 => vec![stage_node(layout, PassKind::F, 0, m - 2)],
        PassKind::InF => vec![],
        PassKind::InAR => all(PassKind::InF).collect(),
        PassKind::InBC => vec![stage_node(layout, PassKind::B, 0, m)],
        PassKind::InB => vec![Node::collective(PassKind::InBC, m)],
    }
}

/// Every pass each device must execute for `n` microbatches, in no particular order.
pub fn required_passes(layout: &Layout, n: usize) -> Vec<Vec<Pass>> {
    let mut out = vec![Vec::new(); layout.devices];
    let mut kinds: Vec<PassKind> = Vec::new();
    if layout.has_output_passes() {
        kinds.extend([PassKind::S, PassKind::T, PassKind::C0, PassKind::C1]);
        if layout.has_reduce() {
            kinds.push(PassKind::C2);
        }
    }
    if layout.sharded_input() {
        kinds.extend([PassKind::InF, PassKind::InB, PassKind::InAR, PassKind::InBC]);
    }
    for m in 0..n {
        for st in &layout.stages {
            out[st.device].push(Pass::new(PassKind::F, st.device, m, st.chunk));
            out[st.device].push(Pass::new(PassKind::B, st.device, m, st.chunk));
        }
        for (d, list) in out.iter_mut().enumerate() {
            list.extend(kinds.iter().map(|&k| Pass::new(k, d, m, 0)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::ModelConfig;
    use crate::schedule::Method;

    fn layout(method: Method) -> Layout {
        let cfg = ModelConfig { b: 1, s: 8, h: 8, v: 32, l: 8, p: 4, n: 8 };
        Layout::new(method, &cfg).unwrap()
    }

    #[test]
    fn last_backward_waits_for_the_right_barrier() {
        let b_last = Node::compute(PassKind::B, 3, 5, 0);
        assert_eq!(dependencies(&layout(Method::Vocab1), &b_last), vec![Node::collective(PassKind::C2, 5)]);
        assert_eq!(dependencies(&layout(Method::Vocab2), &b_last), vec![Node::collective(PassKind::C1, 5)]);
        assert_eq!(
            dependencies(&layout(Method::Baseline1F1B), &b_last),
            vec![Node::compute(PassKind::F, 3, 5, 0)]
        );
    }

    #[test]
    fn vhalf_chain_turns_around_on_the_last_device() {
        let lay = layout(Method::VHalfBase);
        let f = Node::compute(PassKind::F, 3, 0, 1);
        assert_eq!(dependencies(&lay, &f), vec![Node::compute(PassKind::F, 3, 0, 0)]);
        let b = Node::compute(PassKind::B, 3, 0, 0);
        assert_eq!(dependencies(&lay, &b), vec![Node::compute(PassKind::B, 3, 0, 1)]);
    }

    #[test]
    fn input_buffer_edge() {
        let lay = layout(Method::Vocab2);
        assert!(dependencies(&lay, &Node::compute(PassKind::InF, 1, 1, 0)).is_empty());
        assert_eq!(
            dependencies(&lay, &Node::compute(PassKind::InF, 1, 4, 0)),
            vec![Node::compute(PassKind::F, 0, 2, 0)]
        );
        assert_eq!(
            dependencies(&lay, &Node::compute(PassKind::F, 0, 4, 0)),
            vec![Node::collective(PassKind::InAR, 4)]
        );
    }

    #[test]
    fn required_counts() {
        let req = required_passes(&layout(Method::Vocab1), 3);
        // F, B, S, T, C0, C1, C2, InF, InB, InAR, InBC per microbatch
        assert!(req.iter().all(|r| r.len() == 3 * 11));
        let req = required_passes(&layout(Method::VHalfBase), 3);
        assert!(req.iter().all(|r| r.len() == 3 * 4));
    }
}
