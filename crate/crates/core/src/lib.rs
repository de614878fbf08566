pub mod augment;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod train;

/// Version string recorded in checkpoints and reports.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
