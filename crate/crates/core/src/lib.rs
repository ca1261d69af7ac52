//! Koopman models of nonlinear and chaotic dynamics learned from trajectory
//! data: extended and Hankel DMD, the deep-learning Hankel DMD trainer with
//! its adaptive delay count, and lagged mutual-information diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dynamics;
pub mod io;
pub mod dmd;
pub mod mi;
pub mod train;
