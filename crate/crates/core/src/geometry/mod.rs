//! Tensor calculus on a chart box.
//!
//! Metric components are differentiated symbolically; everything downstream
//! of the metric jets (Christoffels, curvature, covariant derivatives) is
//! truncated Taylor arithmetic. All tensors are fully covariant.

pub mod conformal;
pub mod curvature;
pub mod factor;
pub mod foliation;
pub mod metric;
pub mod tensor;
pub mod wick;

pub use conformal::{
    conformal_connection_closed_form, conformal_riemann_closed_form, conformal_riemann_jets,
};
pub use curvature::{
    christoffel_jets, christoffels, covariant_derivative_at, covariant_derivative_k, riemann,
    riemann_jets, sectional_curvature, ExprTensor, MetricTensor, RiemannTensor, TensorField,
};
pub use factor::{ConformalFactor, ExprFactor, ExprProfile, LineLift, Profile, RadialLift};
pub use foliation::{
    conformal_sff_closed_form, second_fundamental_form, sff_jets, FoliationSpec,
    SecondFundamentalForm,
};
pub use metric::{MetricField, MetricJet, MAX_METRIC_ORDER, SYMBOLIC_ORDER};
pub use tensor::{inner_and_norm, inner_with_inverse, TensorJet, TensorSample};
pub use wick::wick_rotation;
