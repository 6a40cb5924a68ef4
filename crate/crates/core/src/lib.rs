//! Change-aware prioritized experience replay for non-stationary control.
//!
//! The crate bundles everything needed to run the method end to end:
//!
//! * [`nn`]: dense MLPs with manual backprop and Adam;
//! * [`envs`]: pendulum and point-mass tasks with scheduled parameter shifts;
//! * [`sac`]: a soft actor-critic learner exposing TD errors and Q-values;
//! * [`detector`]: a classifier-based change detector on the reward stream;
//! * [`doe`]: the Q-discrepancy against a snapshot taken at each detected change;
//! * [`replay`]: sum-tree replay with uniform, TD-proportional and change-aware priorities;
//! * [`harness`]: seeded experiment loop, CSV logs, summaries and SVG plots.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod doe;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod sac;
pub mod stats;

pub use error::{Error, Result};
