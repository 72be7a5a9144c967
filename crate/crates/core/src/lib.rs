//! Finite-volume solver and analysis toolkit for a four-field
//! oncolytic-virotherapy model with haptotaxis and a stationary
//! extracellular-matrix field.
//!
//! The solver works on the transformed densities `a = u e^{-v}` and
//! `b = w e^{-v}`, which turns the cross-diffusion terms into weighted
//! diffusion, and checks trajectories against explicit decay envelopes.

// `!(x > 0.0)` is the intended form throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod envelopes;
pub mod grid;
pub mod harness;
pub mod model;
pub mod stepper;
