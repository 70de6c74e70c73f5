use alloc::string::String;

use crate::flow::MatrixKind;
use crate::spatial::Level;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("{level} `{id}` contains no sites")]
    EmptyUnit { level: Level, id: String },

    #[error("unknown {level} `{id}`")]
    UnknownUnit { level: Level, id: String },

    #[error("duplicate site `{0}`")]
    DuplicateSite(String),

    #[error("{level} `{id}` is assigned to both `{first}` and `{second}`")]
    ConflictingParent {
        level: Level,
        id: String,
        first: String,
        second: String,
    },

    #[error("expected a {expected} matrix, got {found}")]
    MatrixKind { expected: MatrixKind, found: MatrixKind },

    #[error("cannot coarsen a {from} matrix to {to}")]
    LevelOrder { from: Level, to: Level },

    #[error("matrix has {found} units but the hierarchy has {expected} at {level} level")]
    ShapeMismatch {
        level: Level,
        expected: usize,
        found: usize,
    },

    #[error("{level} `{id}` has zero sites, gravity normalization would divide by zero")]
    ZeroSiteCount { level: Level, id: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("correlation undefined: `{0}` is constant")]
    ConstantInput(&'static str),

    #[error("singular design: the predictor is constant")]
    SingularDesign,

    #[error("feature mismatch: model uses `{model}`, scores carry `{scores}`")]
    FeatureMismatch { model: String, scores: String },

    #[error("no retained users in the sample")]
    EmptySample,

    #[error("invalid timestamp: {0}")]
    InvalidTimestamp(String),

    #[error("`{field}` = {value} is outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("expected {expected} indicator values, got {found}")]
    IndicatorArity { expected: usize, found: usize },
}
