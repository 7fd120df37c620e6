//! Stackelberg–Nash null control of stochastic parabolic equations with
//! dynamic boundary conditions, discretized on a binary scenario tree.
//!
//! The crate is organized bottom-up: [`geometry`] and [`tree`] provide the
//! space and probability discretizations, [`forward`] and [`backward`] the
//! stochastic evolution solvers, [`coupled`] the two forward-backward systems,
//! [`nash`] the follower game, [`carleman`] the weight families and
//! observability audit, and [`hum`] the leader-level penalized dual method.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod carleman;
pub mod config;
pub mod coupled;
pub mod error;
pub mod exec;
pub mod forward;
pub mod geometry;
pub mod hum;
pub mod linalg;
pub mod nash;
pub mod problem;
pub mod tree;

pub use error::{Error, Result};
