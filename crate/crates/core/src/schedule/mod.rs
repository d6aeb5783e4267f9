//! Pass vocabulary, layouts, dependency rules and schedule construction.

mod block;
mod build;
mod deps;
mod layout;
mod method;
mod pass;
mod program;
mod redistribute;
mod validate;

pub use block::{analyze_block, building_block, BlockAnalysis, BuildingBlock};
pub use build::{build_program, build_program_with};
pub use deps::{dependencies, required_passes};
pub use layout::{Layout, Stage};
pub use method::{Algorithm, Method, VocabMode};
pub use pass::{Node, Pass, PassKind};
pub use program::DeviceProgram;
pub use redistribute::{redistribute, redistribute_layers, stage_costs, StageAssignment};
pub use validate::{validate_dependencies, Violation};
