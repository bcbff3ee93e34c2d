//! Crate-wide error type.
//!
//! One enum instead of per-module errors: almost every operation threads
//! through jets, scenes and sampling at once, and callers (CLI, tests)
//! mostly care about *which rule* was violated, not which module noticed.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    // ---- jet arithmetic ----
    /// A jet operation left the domain of the underlying function
    /// (division by a jet with zero value, sqrt/ln of a non-positive
    /// value, abs at zero, non-integer power of a negative base).
    #[error("jet domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },

    /// Two jets taking part in one operation were expanded around
    /// different points of the slit tangent bundle.
    #[error("jets are centered at different points ({left} vs {right})")]
    CenterMismatch { left: String, right: String },

    /// A derivative of higher order than the jet carries was requested.
    #[error("partial of order {requested:?} exceeds the valid truncation ({valid:?})")]
    OrderExceeded {
        requested: (usize, usize),
        valid: (usize, usize),
    },

    /// A variable slot outside 0..2n was addressed.
    #[error("variable slot {slot} out of range for dimension {dim}")]
    InvalidSlot { slot: usize, dim: usize },

    // ---- scene text ----
    /// Scene text failed to parse. Carries position and what was expected.
    #[error("syntax error at line {line}, column {col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },

    /// An index or component count disagrees with the declared dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An identifier in an expression is neither a coordinate, a declared
    /// parameter, nor a known function.
    #[error("unknown identifier `{name}` at line {line}, column {col}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        col: usize,
    },

    /// Evaluation was requested at a base point outside the chart.
    #[error("point {point} lies outside the chart {chart}")]
    OutsideChart { point: String, chart: String },

    // ---- geometry ----
    /// A matrix that must be invertible is numerically singular.
    #[error("singular matrix in {context}: condition number {cond:.3e} exceeds {limit:.1e}")]
    SingularMetric {
        context: &'static str,
        cond: f64,
        limit: f64,
    },

    /// The fundamental tensor (or the Riemannian metric) failed a
    /// positive-definiteness check.
    #[error("matrix not positive definite in {context}: min eigenvalue {min_eig:.3e}")]
    NonPositiveDefinite {
        context: &'static str,
        min_eig: f64,
    },

    /// A Randers one-form with ||beta|| >= 1 somewhere on the chart.
    #[error("one-form norm violation: ||beta|| = {norm:.6} at {point}")]
    NormViolation { norm: f64, point: String },

    /// Scene or metric parameters outside their admissible range.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// The volume-form provider cannot deliver what was asked
    /// (e.g. x-derivatives beyond first order from a Monte-Carlo estimate).
    #[error("volume form unavailable: {0}")]
    VolumeUnavailable(String),

    // ---- symmetry ----
    /// A `--fields` entry names no known candidate vector field.
    #[error("unknown vector field `{0}`")]
    UnknownField(String),

    /// A check's precondition fails structurally rather than numerically,
    /// e.g. the homothety criterion on a scene whose one-form is closed.
    #[error("check not applicable: {0}")]
    NotApplicable(String),

    // ---- special-relativity checks ----
    /// A matrix or potential input had the wrong shape or a non-finite entry.
    #[error("malformed matrix input: {0}")]
    MalformedMatrix(String),

    /// The jet engine only runs on positive-definite data; Lorentz-signature
    /// inputs are handled by the dedicated matrix-algebra path.
    #[error("unsupported signature: {0}")]
    SignatureUnsupported(String),

    // ---- oracles ----
    /// A finite-difference stencil would sample outside the chart.
    #[error("finite-difference stencil leaves the chart at {point}")]
    StencilOutsideChart { point: String },

    /// A geodesic integration left the chart before the requested time.
    #[error("geodesic left the chart at t = {t:.4}")]
    LeftChart { t: f64 },

    /// Sampling could not produce enough admissible sites.
    #[error("sampling exhausted after {attempts} attempts ({accepted} accepted, need {needed})")]
    SamplingExhausted {
        attempts: usize,
        accepted: usize,
        needed: usize,
    },

    /// A run configuration violates a documented invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An I/O problem while reading an input file.
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
}
