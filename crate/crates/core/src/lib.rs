pub mod apm;
pub mod error;
pub mod io;
pub mod eval;
pub mod mapping;
pub mod metric;
pub mod nn;
pub mod planner;
pub mod roadmap;
pub mod rng;
pub mod task;

pub use error::{LsrError, Result};
pub use metric::MetricKind;
