//! Popularity-reinforced headline generation.
//!
//! An extractor picks one article sentence (guided by popular-topic
//! attention), an abstractor with a copy mechanism rewrites it, and a
//! binary popularity predictor scores the result. Reinforcement learning
//! with an advantage actor-critic ties the three together.

pub mod abstractor;
pub mod analysis;
pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod extractor;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod predictor;
pub mod seeds;
pub mod topics;
pub mod trainer;

pub use error::{Error, Result};
