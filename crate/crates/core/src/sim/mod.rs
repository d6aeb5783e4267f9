//! Discrete-event execution of device programs and the metrics derived from it.

mod engine;
mod machine;
mod metrics;
mod timeline;

pub use engine::simulate;
pub use machine::MachineModel;
pub use metrics::{device_params, metrics, DeviceMetrics, Metrics, MetricsOptions, CSV_HEADER};
pub use timeline::{Record, Stream, Timeline};
