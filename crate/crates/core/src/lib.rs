//! Feature-centered first-order structure tensor scale-space.
//!
//! The pipeline per scale σ is:
//!
//! 1. γ-normalized Gaussian derivatives ([`tensor::gradient`]).
//! 2. Outer products of the gradient, integrated with a ring filter
//!    ([`filters::apply_ring`]) whose radius is tied to σ so that the ring
//!    collects edge response at the feature center.
//! 3. Per-pixel selection of the σ with the largest tensor trace
//!    ([`scalespace::sweep`]).
//! 4. Shape-dependent correction of the selected scale and conversion to a
//!    feature width.
//!
//! Fields are dense row-major grids of `f64` ([`grid::ScalarField`]), rank 2
//! (y, x) or rank 3 (z, y, x). All vector-valued outputs are indexed by array
//! axis, so component 0 is y in 2D and z in 3D.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filters;
pub mod grid;
pub mod scalecalc;
pub mod scalespace;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use filters::RingSpec;
pub use grid::{BoundaryRule, Kernel1D, ScalarField};
pub use scalecalc::GammaParams;
pub use scalespace::{ScaleGrid, ScaleSpaceResult, Spacing, SweepParams};
pub use synth::{Phantom, PhantomKind, PhantomSpec};
pub use tensor::{EigenField, MeasureField, Orientation, TensorField};
