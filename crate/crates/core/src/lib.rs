//! Great circle fibrations of odd-dimensional spheres.
//!
//! The crate evaluates fibrations of `S^{2n+1} ⊂ R^{2n+2}` by great circles,
//! computes their moving-frame invariants by finite differences, and builds a
//! fiberwise-linear diffeomorphism of the sphere carrying a fibration to a
//! Hopf fibration, together with a sampled certificate.
//!
//! Module layering, bottom up:
//!
//! * [`numkit`]: dense linear algebra glue over `nalgebra`.
//! * [`halfplane`]: endomorphisms without real eigenvalues, the Cayley map,
//!   matrix Möbius actions and the trace-zero normalization.
//! * [`fibration`]: fibrations, planes and their validation.
//! * [`grassmann`]: tangent data in the Grassmannian of oriented planes.
//! * [`framebundle`]: the frame reductions and the osculating complex structure.
//! * [`straighten`]: hinges, the straightening map and its certification.
//! * [`specfile`]: the versioned text formats.

// `!(x > tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fibration;
pub mod framebundle;
pub mod grassmann;
pub mod halfplane;
pub mod numkit;
pub mod sampling;
pub mod specfile;
pub mod straighten;

mod error;

pub use error::{Error, Result};
pub use numkit::{CMat, CVec, RMat, RVec};
