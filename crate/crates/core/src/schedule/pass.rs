use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Kind of work item in a pipeline schedule.
///
/// `C0`, `C1`, `C2` are the broadcast, all-reduce and reduce of the sharded
/// output layer. `InAR` (all-reduce of partial embeddings) and `InBC`
/// (broadcast of the embedding gradient) belong to the sharded input layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PassKind {
    F,
    B,
    S,
    T,
    C0,
    C1,
    C2,
    InF,
    InB,
    InAR,
    InBC,
}

impl PassKind {
    pub const ALL: [PassKind; 11] = [
        PassKind::F,
        PassKind::B,
        PassKind::S,
        PassKind::T,
        PassKind::C0,
        PassKind::C1,
        PassKind::C2,
        PassKind::InF,
        PassKind::InB,
        PassKind::InAR,
        PassKind::InBC,
    ];

    pub fn token(self) -> &'static str {
        match self {
            PassKind::F => "F",
            PassKind::B => "B",
            PassKind::S => "S",
            PassKind::T => "T",
            PassKind::C0 => "C0",
            PassKind::C1 => "C1",
            PassKind::C2 => "C2",
            PassKind::InF => "InF",
            PassKind::InB => "InB",
            PassKind::InAR => "InAR",
            PassKind::InBC => "InBC",
        }
    }

    /// Collectives involve every device and run on the communication stream.
    pub fn is_collective(self) -> bool {
        matches!(self, PassKind::C0 | PassKind::C1 | PassKind::C2 | PassKind::InAR | PassKind::InBC)
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PassKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        PassKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("unknown pass kind `{s}`") })
    }
}

/// One entry of a device's program. For collectives `device` is the
/// participating device; the collective itself is shared (see [`Node`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pass {
    pub kind: PassKind,
    pub device: usize,
    pub microbatch: usize,
    pub chunk: usize,
}

impl Pass {
    pub fn new(kind: PassKind, device: usize, microbatch: usize, chunk: usize) -> Self {
        Pass { kind, device, microbatch, chunk }
    }

    pub fn node(&self) -> Node {
        Node {
            kind: self.kind,
            device: (!self.kind.is_collective()).then_some(self.device),
            microbatch: self.microbatch,
            chunk: self.chunk,
        }
    }

    /// Kind token with a `:chunk` suffix for non-zero chunks.
    pub fn label(&self) -> String {
        if self.chunk == 0 {
            self.kind.token().to_string()
        } else {
            format!("{}:{}", self.kind.token(), self.chunk)
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[d{} m{}]", self.label(), self.device, self.microbatch)
    }
}

/// Vertex of the dependency graph. Collectives have no device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node {
    pub kind: PassKind,
    pub device: Option<usize>,
    pub microbatch: usize,
    pub chunk: usize,
}

impl Node {
    pub fn compute(kind: PassKind, device: usize, microbatch: usize, chunk: usize) -> Self {
        Node { kind, device: Some(device), microbatch, chunk }
    }

    pub fn collective(kind: PassKind, microbatch: usize) -> Self {
        Node { kind, device: None, microbatch, chunk: 0 }
    }

    /// The pass this node corresponds to on `device`.
    pub fn on(&self, device: usize) -> Pass {
        Pass::new(self.kind, self.device.unwrap_or(device), self.microbatch, self.chunk)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chunk = if self.chunk == 0 { String::new() } else { format!(":{}", self.chunk) };
        match self.device {
            Some(d) => write!(f, "{}{}[d{} m{}]", self.kind, chunk, d, self.microbatch),
            None => write!(f, "{}{}[m{}]", self.kind, chunk, self.microbatch),
        }
    }
}
