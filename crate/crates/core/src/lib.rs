//! Active-front-end drive simulation with a stable neural performance-boosting
//! controller trained by backpropagation through time.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod control;
pub mod diff;
pub mod error;
pub mod io;
pub mod neural;
pub mod plant;
pub mod rollout;
pub mod rpb;
pub mod scenarios;
pub mod trainer;

pub use error::{Error, Result};
