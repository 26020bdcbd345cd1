//! Numerical laboratory for geometric rigidity of incompatible matrix fields.
//!
//! The crate discretizes the unit ball on a uniform grid, represents matrix
//! fields as stacks of 1-forms, and provides:
//!
//! - [`grid`]: domains, form and matrix fields, the discrete exterior
//!   derivative and Curl, and the norms used throughout (L^p, weak-L^p,
//!   total variation, BMO, distance to SO(n)).
//! - [`homotopy`]: the averaged linear homotopy operator in direct and kernel
//!   form, the Riesz envelope and potential recovery.
//! - [`rigidity`]: rotation fitting and the empirical rigidity checks.
//! - [`cz`]: Calderón–Zygmund decomposition and the level-set split.
//! - [`bv`]: piecewise-rotation approximation on cube tessellations.
//! - [`fields`]: deterministic generators for test-field families.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bv;
pub mod cz;
pub mod error;
pub mod fields;
pub mod grid;
pub mod homotopy;
pub mod multiindex;
pub mod quadrature;
pub mod rigidity;
pub mod sum;
pub mod table;

pub use error::{Error, Result};
pub use grid::{
    FormField, GridDomain, MatrixField, MeasureDensity, NodeField, Point, Rotation, Segment,
};

/// Critical exponent `n / (n - 1)`.
pub fn critical_exponent(n: usize) -> f64 {
    n as f64 / (n as f64 - 1.0)
}
