//! Core models for a two-wheeled, dual-steering magnetic climbing robot:
//! piecewise-developable steel surfaces, static sizing, wheel kinematics, a
//! deterministic locomotion simulator and the inspection mapping pipeline.

// Negated comparisons are how NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod exec;
pub mod geometry;
pub mod inspection;
pub mod kinematics;
pub mod scenario;
pub mod simulator;
pub mod statics;

pub use exec::Exec;
