//! Experiment driver for conservation-projected PINNs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;
