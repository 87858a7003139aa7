//! Conical square functions, tent spaces and semigroup estimates on finite weighted graphs.
//!
//! A [`manifold::DiscreteManifold`] carries a measure, conductances and a path
//! metric. Operators are diagonalized once ([`spectral`]); every square
//! function is then evaluated from the spectral data ([`cones`], [`forms`]).
//! [`probes`] and [`czd`] measure the analytic inequalities empirically and
//! [`cli`] runs reproducible batch scenarios.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cones;
pub mod czd;
pub mod error;
pub mod forms;
pub mod manifold;
pub mod probes;
pub mod quadrature;
pub mod report;
pub mod spectral;

pub use error::{Error, Result};
