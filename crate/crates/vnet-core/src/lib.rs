//! Core computations for building call-flow "virtual networks" over a spatial
//! hierarchy and relating their structure to poverty indicators.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (an allocator is required). File formats, the synthetic
//! world generator and the command line live in the `vnet` crate.
#![no_std]
// `!(x > 0.0)` style checks reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;


pub mod behavior;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;

pub mod numeric;
pub mod records;
pub mod spatial;
pub mod stats;
pub mod time;

pub use error::{Error, Result};
pub use flow::{FlowMatrix, MatrixKind, SiteMatrixBuilder};
pub use metrics::{Direction, Measure, NodeScoreVector};
pub use records::{BehaviorRecord, FlowRecord, PovertyRecord, UserCallEvent, INDICATOR_NAMES};
pub use spatial::{Level, LatLon, SpatialHierarchy, SpatialUnit};
pub use stats::{CorrelationResult, InfluenceReport, LinearModel};
pub use time::HourStamp;
