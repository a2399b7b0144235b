//! Transmission power control for distributed Kalman filtering over lossy
//! wireless links, with observability-constrained action spaces and a
//! deterministic policy gradient learner.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod ddpg;
pub mod dkf;
pub mod env;
pub mod error;
pub mod experiment;
pub mod hotroll;
pub mod linalg;
pub mod linsys;
pub mod matio;
pub mod obsbound;
pub mod rng;

pub use error::{Error, Result};
