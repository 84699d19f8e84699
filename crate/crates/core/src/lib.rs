// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell_solver;
pub mod config;
pub mod construction;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod homogenizer;
pub mod lattice;
pub mod linalg;
pub mod reduce;
pub mod sampling;
