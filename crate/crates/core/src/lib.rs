//! End-to-end neural meeting diarization.
//!
//! A temporal-convolution local encoder followed by a self-attention global
//! encoder predicts a speaker-activity image for every 100 ms frame. Training
//! uses permutation-invariant losses on simulated meetings built from a
//! synthetic speaker corpus.

pub mod assignment;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod gradcore;
pub mod losses;
pub mod meetingsim;
pub mod model;
pub mod rng;
pub mod selfcheck;
pub mod trainer;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use gradcore::Tensor;
