//! Offline multi-agent reinforcement learning with one-step mean-flow policies.
//!
//! Each agent owns a mean-velocity network `u(a_r, r, t | o)` that turns
//! Gaussian noise into an action with a single evaluation, trained from a
//! fixed dataset with a mean-flow regression loss plus Q-value guidance from
//! a pair of critics.
//!
//! Module map:
//!
//! - [`nn`]: tensors, MLPs, reverse/forward-mode derivatives, Adam.
//! - [`timestep`]: exponential-family timestep distribution and sampling.
//! - [`meanflow`]: interpolation paths, target velocities, BC loss, sampling.
//! - [`critic`]: double critics, Bellman regression, Q-guidance gradients.
//! - [`envs`]: cooperative particle tasks and an oracle MDP.
//! - [`dataset`]: quality-tiered offline datasets and their file format.
//! - [`trainer`]: the per-agent training loop, evaluation and scoring.

pub mod critic;
pub mod dataset;
pub mod envs;
mod error;
pub mod meanflow;
pub mod nn;
pub mod rng;
pub mod timestep;
pub mod trainer;

pub use error::{Error, Result};
