//! Lie group equivariant convolution on continuous point data.
//!
//! The crate is layered bottom-up:
//!
//! - [`matlie`]: small dense matrices, matrix exp/log.
//! - [`groups`]: closed-form group exponentials, lifting, orbits.
//! - [`geometry`]: invariant distances, neighborhoods, subsampling.
//! - [`diff`]: a tensor tape with reverse mode and forward-over-reverse
//!   second derivatives.
//! - [`net`]: the LieConv layer and the residual network around it.
//! - [`dynamics`]: spring systems, RK4, Hamiltonian models and training.

pub mod diff;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod groups;
pub mod io;
pub mod matlie;
pub mod net;
pub mod rng;

pub use error::{Error, Result};
