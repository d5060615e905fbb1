//! Finite-element laboratory for the wave equation with localized
//! Kelvin-Voigt damping.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod carleman;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod linalg;
pub mod resolvent;
pub mod spectral;

pub use error::{Error, Result};
