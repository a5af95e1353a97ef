//! ENCODE: two-stage long-term user behavior modeling.
//!
//! Offline, each user's behavior sequence is projected into a small space,
//! clustered, and condensed into a handful of interest vectors. Online, a
//! target item attends over those interests instead of the raw sequence.

pub mod baselines;
pub mod clustering;
pub mod datagen;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod inference;
pub mod interest;
pub mod numerics;
pub mod optim;
pub mod projection;
pub mod serve;
pub mod store;

pub use error::{Error, Result};
