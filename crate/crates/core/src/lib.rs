//! Tabular contextual-MDP curriculum reinforcement learning.
//!
//! Exact entropy-regularized solvers, random-horizon and REINFORCE-style softmax
//! policy gradients, the mixture roll-in curriculum driver, the four-room
//! gridworld family, and a numerical check suite for the supporting bounds.

pub mod error;
pub mod exact;
pub mod fourroom;
pub mod instances;
pub mod metrics;
pub mod rollin;
pub mod sampling;
pub mod spg;
pub mod tabular;
pub mod verify;

pub use error::{Error, Result};
