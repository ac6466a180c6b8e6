//! Reinforced dynamic adversarial training for graph-based traffic forecasting.
//!
//! The crate is organised bottom-up: [`datakit`] produces normalised windows,
//! [`forecaster`] is the model under attack, [`perturb`] holds the threat model
//! and node selectors, [`policy`] learns which nodes to attack, [`advtrain`]
//! runs the defence, and [`harness`] wires everything into reproducible runs.

// Range checks are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advtrain;
pub mod autograd;
pub mod datakit;
pub mod error;
pub mod forecaster;
pub mod harness;
pub mod parallel;
pub mod params;
pub mod perturb;
pub mod policy;
pub mod seeding;

pub use error::{Error, Result};
