//! Operator surface for the magbot simulator: the `magbot` command line and
//! a WebSocket teleoperation service.

// Negated comparisons are how NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod protocol;
pub mod server;
pub mod session;
pub mod world;
