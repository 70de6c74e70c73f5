//! File formats, synthetic worlds, maps and the command-line pipeline built
//! on [`vnet_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geojson;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod svg;
pub mod synth;

pub use error::{Error, ParseError, Result};
