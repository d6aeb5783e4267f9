use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Schedules that can be built and compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// 1F1B with the input layer on the first device and the output layer on the last.
    Baseline1F1B,
    /// 1F1B with transformer layers moved away from the vocabulary stages.
    Redis,
    /// Vocabulary sharded over all devices, two-barrier output layer.
    Vocab1,
    /// Vocabulary sharded over all devices, one-barrier output layer.
    Vocab2,
    /// Tensor-parallel vocabulary phases that synchronize every device.
    Interlaced,
    /// V-shaped two-chunk placement, vocabulary layers on device 0.
    VHalfBase,
    /// V-shaped placement with the two-barrier sharded output layer.
    VHalfVocab1,
}

/// How the vocabulary layers are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabMode {
    /// Input layer folded into the first stage, output layer into the last.
    Folded,
    /// Sharded output layer with asynchronous collectives.
    Sharded(Algorithm),
    /// Sharded, but every collective stalls all compute streams.
    Interlaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// C0, C1 and C2; the last-stage backward waits for C2.
    TwoBarrier,
    /// C0 and C1; the last-stage backward waits for C1.
    OneBarrier,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Baseline1F1B,
        Method::Redis,
        Method::Vocab1,
        Method::Vocab2,
        Method::Interlaced,
        Method::VHalfBase,
        Method::VHalfVocab1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline1F1B => "baseline",
            Method::Redis => "redis",
            Method::Vocab1 => "vocab1",
            Method::Vocab2 => "vocab2",
            Method::Interlaced => "interlaced",
            Method::VHalfBase => "vhalf",
            Method::VHalfVocab1 => "vhalf-vocab1",
        }
    }

    pub fn vocab_mode(self) -> VocabMode {
        match self {
            Method::Baseline1F1B | Method::Redis | Method::VHalfBase => VocabMode::Folded,
            Method::Vocab1 | Method::VHalfVocab1 => VocabMode::Sharded(Algorithm::TwoBarrier),
            Method::Vocab2 => VocabMode::Sharded(Algorithm::OneBarrier),
            Method::Interlaced => VocabMode::Interlaced,
        }
    }

    /// Model chunks per device.
    pub fn chunks(self) -> usize {
        match self {
            Method::VHalfBase | Method::VHalfVocab1 => 2,
            _ => 1,
        }
    }

    /// Whether collectives occupy the compute streams of every device.
    pub fn synchronous_collectives(self) -> bool {
        matches!(self.vocab_mode(), VocabMode::Interlaced)
    }

    /// Communication barriers between the last forward and the last backward.
    pub fn barriers(self) -> usize {
        match self.vocab_mode() {
            VocabMode::Folded => 0,
            VocabMode::Sharded(Algorithm::TwoBarrier) => 2,
            VocabMode::Sharded(Algorithm::OneBarrier) => 1,
            VocabMode::Interlaced => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let m = match key.as_str() {
            "baseline" | "1f1b" | "baseline1f1b" => Method::Baseline1F1B,
            "redis" => Method::Redis,
            "vocab1" | "vocab-1" => Method::Vocab1,
            "vocab2" | "vocab-2" => Method::Vocab2,
            "interlaced" => Method::Interlaced,
            "vhalf" | "v-half" | "vhalf-base" => Method::VHalfBase,
            "vhalf-vocab1" | "v-half-vocab1" | "vhalf-vocab-1" => Method::VHalfVocab1,
            _ => return Err(Error::UnknownMethod(s.to_string())),
        };
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("VOCAB_2".parse::<Method>().unwrap(), Method::Vocab2);
        assert_eq!("gpipe".parse::<Method>().unwrap_err(), Error::UnknownMethod("gpipe".into()));
    }

    #[test]
    fn barrier_counts() {
        assert_eq!(Method::Vocab1.barriers(), 2);
        assert_eq!(Method::Vocab2.barriers(), 1);
        assert_eq!(Method::Baseline1F1B.barriers(), 0);
    }
}
