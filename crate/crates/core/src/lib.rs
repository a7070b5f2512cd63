// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod nn;
pub mod par;
pub mod ppo;
pub mod rate;
pub mod statcov;

pub use error::{Error, Result};
