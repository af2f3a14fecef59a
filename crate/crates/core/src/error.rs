use thiserror::Error;

/// Errors raised by the discretization, assembly and solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid domain: t_0 = {t0} must be strictly less than t_E = {te}")]
    InvalidDomain { t0: f64, te: f64 },

    #[error("invalid interval count: {0}")]
    InvalidCount(usize),

    #[error("invalid breakpoints: {0}")]
    InvalidBreakpoints(String),

    #[error("meshes do not share a common domain")]
    DomainMismatch,

    #[error("unsupported quadrature order: {0} nodes (supported range 1..=64)")]
    UnsupportedOrder(usize),

    #[error("unsupported polynomial degree: {0} (supported range 0..=30)")]
    UnsupportedDegree(usize),

    #[error("point {point} lies outside {range}")]
    OutOfRange { point: f64, range: String },

    #[error("non-finite value at evaluation point {index} (t = {t})")]
    NonFiniteEvaluation { index: usize, t: f64 },

    #[error("component {component} is continuous and requires degree >= 1")]
    DegreeContinuityConflict { component: usize },

    #[error("quadrature rule is inconsistent with the space: {0}")]
    Provenance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("callback failed at {context}: {message}")]
    Callback { context: String, message: String },

    #[error("barrier domain violated: z[{component}] = {value} at quadrature point {point}")]
    BarrierDomain {
        point: usize,
        component: usize,
        value: f64,
    },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
