//! As-soon-as-possible execution of per-device pass lists.

use std::collections::HashMap;

use super::machine::MachineModel;
use super::timeline::{Record, Stream, Timeline};
use crate::error::{Error, Result};
use crate::schedule::{dependencies, DeviceProgram, Node, Pass};

struct Queue {
    passes: Vec<Pass>,
    head: usize,
    free: f64,
}

impl Queue {
    fn peek(&self) -> Option<Pass> {
        self.passes.get(self.head).copied()
    }
}

/// Runs `program` on `machine`.
///
/// Each device executes its compute list in order, starting every pass once
/// its dependencies have ended. A collective starts when every device has it
/// at the head of the stream that carries collectives; with synchronous
/// collectives that stream is the compute stream.
pub fn simulate(program: &DeviceProgram, machine: &MachineModel) -> Result<Timeline> {
    let p = machine.devices();
    if program.devices.len() != p {
        return Err(Error::InvalidConfig(format!(
            "program has {} device lists, machine has {p} devices",
            program.devices.len()
        )));
    }
    let sync = machine.sync_collectives;
    let comm_stream = if sync { Stream::Compute } else { Stream::Comm };
    let mut queues: Vec<[Queue; 2]> = program
        .devices
        .iter()
        .map(|list| {
            let (comm, compute): (Vec<Pass>, Vec<Pass>) =
                list.iter().partition(|pass| pass.kind.is_collective() && !sync);
            [Queue { passes: compute, head: 0, free: 0.0 }, Queue { passes: comm, head: 0, free: 0.0 }]
        })
        .collect();
    let slot = |s: Stream| if s == Stream::Compute { 0 } else { 1 };
    let total: usize = queues.iter().map(|q| q[0].passes.len() + q[1].passes.len()).sum();

    let mut end: HashMap<Node, f64> = HashMap::new();
    let mut records: Vec<Vec<Record>> = vec![Vec::new(); p];
    let mut done = 0;
    let deps_ready = |node: &Node, end: &HashMap<Node, f64>| -> Option<f64> {
        let mut t: f64 = 0.0;
        for dep in dependencies(&machine.layout, node) {
            t = t.max(*end.get(&dep)?);
        }
        Some(t)
    };

    while done < total {
        let mut progressed = false;
        for d in 0..p {
            for s in [Stream::Compute, Stream::Comm] {
                while let Some(pass) = queues[d][slot(s)].peek() {
                    let node = pass.node();
                    let Some(ready) = deps_ready(&node, &end) else { break };
                    if pass.kind.is_collective() {
                        let at_head = (0..p).all(|e| queues[e][slot(comm_stream)].peek().map(|x| x.node()) == Some(node));
                        if !at_head {
                            break;
                        }
                        let start = (0..p).map(|e| queues[e][slot(comm_stream)].free).fold(ready, f64::max);
                        let finish = start + machine.collective;
                        for (e, rec) in records.iter_mut().enumerate() {
                            let q = &mut queues[e][slot(comm_stream)];
                            q.head += 1;
                            q.free = finish;
                            rec.push(Record { pass: node.on(e), stream: comm_stream, start, end: finish });
                        }
                        end.insert(node, finish);
                        done += p;
                    } else {
                        let q = &mut queues[d][slot(s)];
                        let start = ready.max(q.free);
                        let finish = start + machine.duration(&pass);
                        q.head += 1;
                        q.free = finish;
                        records[d].push(Record { pass, stream: s, start, end: finish });
                        end.insert(node, finish);
                        done += 1;
                    }
                    progressed = true;
                }
            }
        }
        if !progressed {
            let blocked = queues
                .iter()
                .flat_map(|qs| qs.iter().filter_map(Queue::peek))
                .collect();
            return Err(Error::Deadlock { blocked });
        }
    }

    for list in &mut records {
        list.sort_by(|a, b| {
            (a.stream, a.start, a.end, a.pass)
                .partial_cmp(&(b.stream, b.start, b.end, b.pass))
                .expect("finite times")
        });
    }
    let makespan = records.iter().flatten().map(|r| r.end).fold(0.0, f64::max);
    Ok(Timeline { devices: records, makespan })
}
