use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use super::deps::{dependencies, required_passes};
use super::layout::Layout;
use super::pass::{Node, Pass};
use super::program::DeviceProgram;

/// A way in which a program breaks the scheduling rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A required pass is absent from its device.
    Missing(Pass),
    /// A pass appears more than once on its device.
    Duplicate(Pass),
    /// A pass that the method never schedules on this device.
    Unexpected(Pass),
    /// `pass` precedes one of its dependencies in the same device's list.
    OutOfOrder { pass: Pass, dependency: Node },
    /// Orders that are locally consistent but wait on each other across devices.
    Deadlock { blocked: Vec<Pass> },
    /// The program cannot be laid out (for example uneven stages).
    Layout(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing(p) => write!(f, "missing {p}"),
            Violation::Duplicate(p) => write!(f, "duplicate {p}"),
            Violation::Unexpected(p) => write!(f, "unexpected {p}"),
            Violation::OutOfOrder { pass, dependency } => write!(f, "{pass} scheduled before {dependency}"),
            Violation::Deadlock { blocked } => write!(f, "cross-device wait cycle involving {} passes", blocked.len()),
            Violation::Layout(msg) => write!(f, "layout: {msg}"),
        }
    }
}

/// Checks presence, per-device ordering and cross-device progress.
pub fn validate_dependencies(program: &DeviceProgram) -> Vec<Violation> {
    let layout = match Layout::new(program.method, &program.cfg) {
        Ok(l) => l,
        Err(e) => return vec![Violation::Layout(e.to_string())],
    };
    let mut violations = Vec::new();
    if program.devices.len() != layout.devices {
        violations.push(Violation::Layout(format!(
            "{} device lists for p={}",
            program.devices.len(),
            layout.devices
        )));
        return violations;
    }
    let required = required_passes(&layout, program.cfg.n);
    for (d, list) in program.devices.iter().enumerate() {
        let expected: BTreeSet<Pass> = required[d].iter().copied().collect();
        let mut seen = BTreeSet::new();
        for pass in list {
            if pass.device != d || !expected.contains(pass) {
                violations.push(Violation::Unexpected(*pass));
            } else if !seen.insert(*pass) {
                violations.push(Violation::Duplicate(*pass));
            }
        }
        violations.extend(expected.difference(&seen).map(|p| Violation::Missing(*p)));
    }

    for (d, list) in program.devices.iter().enumerate() {
        let position: HashMap<Node, usize> = list.iter().enumerate().map(|(i, p)| (p.node(), i)).collect();
        for (i, pass) in list.iter().enumerate() {
            for dep in dependencies(&layout, &pass.node()) {
                let local = dep.device.is_none() || dep.device == Some(d);
                if !local {
                    continue;
                }
                if let Some(&j) = position.get(&dep) {
                    if j > i {
                        violations.push(Violation::OutOfOrder { pass: *pass, dependency: dep });
                    }
                }
            }
        }
    }

    if violations.is_empty() {
        if let Some(blocked) = find_cycle(program, &layout) {
            violations.push(Violation::Deadlock { blocked });
        }
    }
    violations
}

/// Topological sort over dependency edges plus stream-order edges; returns the
/// passes that can never start, if any.
fn find_cycle(program: &DeviceProgram, layout: &Layout) -> Option<Vec<Pass>> {
    let sync = program.method.synchronous_collectives();
    let mut index: HashMap<Node, usize> = HashMap::new();
    let mut nodes: Vec<Pass> = Vec::new();
    for pass in program.passes() {
        index.entry(pass.node()).or_insert_with(|| {
            nodes.push(*pass);
            nodes.len() - 1
        });
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut indeg = vec![0usize; nodes.len()];
    let mut edge = |a: usize, b: usize, succ: &mut Vec<Vec<usize>>| {
        succ[a].push(b);
        indeg[b] += 1;
    };
    for (i, pass) in nodes.iter().enumerate() {
        for dep in dependencies(layout, &pass.node()) {
            if let Some(&j) = index.get(&dep) {
                edge(j, i, &mut succ);
            }
        }
    }
    for list in &program.devices {
        let mut prev_compute = None;
        let mut prev_comm = None;
        for pass in list {
            let i = index[&pass.node()];
            let prev = if pass.kind.is_collective() && !sync { &mut prev_comm } else { &mut prev_compute };
            if let Some(j) = prev.replace(i) {
                edge(j, i, &mut succ);
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut done = 0;
    while let Some(i) = queue.pop_front() {
        done += 1;
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    (done < nodes.len()).then(|| (0..nodes.len()).filter(|&i| indeg[i] > 0).map(|i| nodes[i]).collect())
}
