//! Markov families for partially hyperbolic affine maps of tori.

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coding;
pub mod refinement;
pub mod region_algebra;
pub mod shadowing;
pub mod symbolic_cover;
pub mod torus_model;
pub mod transversal;
pub mod zero_center;
