//! Decentralized multi-agent reinforcement learning with grounded emergent
//! communication.
//!
//! Agents are independent recurrent actor-critics that exchange continuous
//! 4-dimensional messages. Message spaces are grounded either with a
//! trajectory-contrastive loss (messages from one episode are positives,
//! messages from other episodes negatives) or with an autoencoder
//! reconstruction baseline, and the resulting protocols are compared by
//! density clustering of the messages agents actually send.

pub mod autodiff;
pub mod error;
pub mod nets;

pub use error::{Error, Result};
pub mod envs;
pub mod grounding;
pub mod trainer;
pub mod analysis;
pub mod harness;
