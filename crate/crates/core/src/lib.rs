//! Numerical laboratory for quasi-periodic lattice operators
//! `H(x) = S + λ v(x + nω)` on `Z^d`.
//!
//! Modules follow the ingredients of a multi-scale localization argument:
//! geometry of elementary regions, the operator family, Green's functions and
//! their goodness, resolvent gluing, the large-coupling initial step, Cartan
//! type estimates and the scale-schedule bookkeeping.

pub mod cartan;
pub mod error;
pub mod gluing;
pub mod greens;
pub mod initial;
pub mod lattice;
pub mod linalg;
pub mod localization;
pub mod logscale;
pub mod model;
pub mod multiscale;
pub mod sampling;
pub mod schedule;

pub use error::{Error, Result};
