//! Non-intrusive dynamical model inference from state snapshot data.
//!
//! The library learns three kinds of models from snapshots of a dynamical
//! system and simulates them forward in time:
//!
//! - a reduced quadratic model on a projection basis (operator inference),
//! - a sparse full-order model of per-DOF stencil coefficients restricted
//!   to graph-adjacent unknowns (sFOM inference),
//! - a two-way coupled combination of both over a domain decomposition,
//!   with interface inputs on either side and an optional blended overlap.
//!
//! All least-squares problems support a stability-promoting regularization
//! that augments the ridge penalty with a pull on the linear
//! self-coefficients, steering the Gershgorin disk centers of the inferred
//! linear operators toward the left complex half-plane. Hyperparameters are
//! selected on an L-curve.

pub mod burgers;
pub mod costmodel;
pub mod couple;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model_io;
pub mod opinf;
pub mod pod;
pub mod regression;
pub mod sfom;
pub mod simulate;

pub use error::{Error, Result};
