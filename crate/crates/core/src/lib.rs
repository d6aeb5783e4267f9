//! Pipeline-parallel training schedules with a vocabulary-parallel output
//! layer: cost model, partitioned softmax math, schedule construction and a
//! discrete-event simulator.

pub mod cost;
pub mod error;
pub mod schedule;
pub mod sim;
pub mod vocab;

pub use cost::{ModelConfig, PassDurations};
pub use error::{Error, Result};
pub use schedule::{build_program, DeviceProgram, Method, Pass, PassKind};
