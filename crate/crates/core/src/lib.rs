//! Simulator of multi-user wireless interactive VR with edge-device
//! collaborative rendering, exposed as a constrained-MDP environment.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod config;
pub mod env;
pub mod metrics;
pub mod pipeline;
pub mod sweep;
pub mod workload;
