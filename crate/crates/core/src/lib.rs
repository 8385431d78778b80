//! Offline-to-online fine-tuning of discrete-action policies whose action
//! sampler is a continuous-time Markov chain over the action set.
//!
//! The crate is organised bottom-up:
//!
//! - [`ctmc`]: rate rows, Euler simulation, forward-equation integration.
//! - [`bridge`]: linear probability bridge, coupling rates, coverage and
//!   stability quantities.
//! - [`nn`]: dense ReLU networks with hand-written gradients, Adam, checkpoints.
//! - [`env`]: gridworld environments and offline data collection.
//! - [`value`]: replay, twin critics, value network.
//! - [`policy`]: candidate sets, smoothed reference, advantage-tilted targets.
//! - [`actor`]: rate network, flow-matching and path-KL losses, actor update.
//! - [`pretrain`]: offline critic and generator pretraining.
//! - [`dqn`]: Double DQN baseline.
//! - [`harness`]: configs, training runs, evaluation, ablations, theory checks.

pub mod actor;
pub mod bridge;
pub mod ctmc;
pub mod dqn;
pub mod env;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod pretrain;
pub mod value;

mod error;

pub use error::{Error, Result};
