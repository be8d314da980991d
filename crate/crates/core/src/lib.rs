//! Conformal flattening of semi-Riemannian metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards, clippy::type_complexity, clippy::needless_range_loop)]

pub mod alpinist;
pub mod checks;
pub mod constructor;
pub mod error;
pub mod expr;
pub mod flatzoomer;
pub mod geometry;
pub mod io;
pub mod jet;
pub mod radii;

pub use error::{GeometryError, InputError};
