use crate::expr::{EvalError, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("metric matrix is singular at {0:?}")]
    Singular(Vec<f64>),
    #[error("metric restricted to the leaves is degenerate at {0:?}")]
    LeafDegenerate(Vec<f64>),
    #[error(
        "eigenvalue signs {found:?} at {point:?} do not match declared signature {declared:?}"
    )]
    SignatureMismatch {
        point: Vec<f64>,
        declared: Vec<i8>,
        found: Vec<i8>,
    },
    #[error("metric components {0} and {1} are not symmetric")]
    Asymmetric(usize, usize),
    #[error("derivative order {requested} exceeds supported cap {cap}")]
    OrderCap { requested: usize, cap: usize },
    #[error("unsupported dimension {0}; expected 1 to 4")]
    Dimension(usize),
    #[error("invalid foliation leaf dimension {0}")]
    Foliation(usize),
    #[error("point {0:?} lies outside the chart domain")]
    OutsideDomain(Vec<f64>),
    #[error("time function gradient is not timelike at {0:?}")]
    NotTimelike(Vec<f64>),
    #[error("plane is degenerate for the metric")]
    DegeneratePlane,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Parse { context: String, source: ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
