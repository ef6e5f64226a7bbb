//! Trace-driven simulator of a cache hierarchy whose last-level cache is a
//! non-pipelined NVM array fronted by small SRAM page buffers.
//!
//! The LLC stores every line of a 4KB page in one physical row. When an L1
//! TLB refill shows that a page was referenced before, a page transfer
//! request asks the LLC to copy the page's resident lines into a page buffer
//! with a single row read, so later reads to that page avoid the slow array.

pub mod cache;
pub mod config;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod hierarchy;
pub mod llc;
pub mod metrics;
pub mod page_buffer;
pub mod synth;
pub mod trace;
pub mod translation;

pub use config::{Scheme, SimConfig};
pub use error::{Error, Result};
pub use hierarchy::{run_trace, MemRequest, RunOutput, SimOptions, Simulator};
pub use metrics::{Report, RunMetrics, Source};
pub use trace::{Op, TraceRecord};

/// Double-precision energy model.
pub type EnergyModel64 = energy::EnergyModel<f64>;
/// Single-precision energy model.
pub type EnergyModel32 = energy::EnergyModel<f32>;
pub type EnergyBreakdown64 = energy::EnergyBreakdown<f64>;
pub type Report64 = metrics::Report<f64>;
pub type Report32 = metrics::Report<f32>;
