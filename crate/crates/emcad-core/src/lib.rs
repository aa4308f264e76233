//! CPU reference implementation of an efficient multi-scale convolutional
//! attention decoder for segmentation, with static parameter/FLOP
//! accounting, deep-supervision losses, and evaluation metrics.

pub mod blocks;
pub mod cost;
pub mod decoder;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
