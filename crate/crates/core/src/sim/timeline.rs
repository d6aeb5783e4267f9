use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::schedule::{dependencies, Layout, Node, Pass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Compute,
    Comm,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Compute => "compute",
            Stream::Comm => "comm",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One executed pass. Collectives produce one record per participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub pass: Pass,
    pub stream: Stream,
    pub start: f64,
    pub end: f64,
}

impl Record {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    /// Per device, sorted by stream then start time.
    pub devices: Vec<Vec<Record>>,
    pub makespan: f64,
}

impl Timeline {
    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.devices.iter().flatten()
    }

    /// Records on `device` that occupy its compute stream, in time order.
    pub fn compute(&self, device: usize) -> impl Iterator<Item = &Record> {
        self.devices[device].iter().filter(|r| r.stream == Stream::Compute)
    }

    /// Compute-stream time spent on compute passes (collectives excluded).
    pub fn busy(&self, device: usize) -> f64 {
        self.compute(device)
            .filter(|r| !r.pass.kind.is_collective())
            .map(Record::duration)
            .sum()
    }

    /// `[first start, last end]` of the compute passes on `device`.
    pub fn active_span(&self, device: usize) -> Option<(f64, f64)> {
        let mut it = self.compute(device).filter(|r| !r.pass.kind.is_collective());
        let first = it.next()?;
        let (lo, hi) = it.fold((first.start, first.end), |(lo, hi), r| (lo.min(r.start), hi.max(r.end)));
        Some((lo, hi))
    }

    /// End time of every node; collectives map to their (shared) end.
    pub fn end_times(&self) -> HashMap<Node, f64> {
        self.records().map(|r| (r.pass.node(), r.end)).collect()
    }

    pub fn start_times(&self) -> HashMap<Node, f64> {
        self.records().map(|r| (r.pass.node(), r.start)).collect()
    }

    /// Dependency edges whose consumer starts before its producer ends.
    pub fn dependency_violations(&self, layout: &Layout) -> Vec<(Node, Node)> {
        let ends = self.end_times();
        let mut bad = Vec::new();
        for r in self.records() {
            for dep in dependencies(layout, &r.pass.node()) {
                match ends.get(&dep) {
                    Some(&e) if r.start + 1e-9 >= e => {}
                    _ => bad.push((r.pass.node(), dep)),
                }
            }
        }
        bad.sort();
        bad.dedup();
        bad
    }

    /// `device stream kind microbatch start end`, one line per record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            let _ = writeln!(
                out,
                "{} {} {} {} {:.6} {:.6}",
                r.pass.device,
                r.stream,
                r.pass.label(),
                r.pass.microbatch,
                r.start,
                r.end
            );
        }
        out
    }
}
