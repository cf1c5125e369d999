//! Experiment driver for `rflab`: configuration, the invariant suite, sweeps
//! and the sampling command behind the `rflab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod sweep;
pub mod verify;
