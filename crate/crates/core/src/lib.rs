//! Linear-RNN (RWKV) time-series forecasting engine.
//!
//! Series are instance-normalized per channel, cut into patches, embedded,
//! and passed through stacked time-mixing / channel-mixing blocks that can
//! run either over whole sequences (parallel mode) or one token at a time
//! with a fixed-size state (recurrent mode). A flatten head produces the
//! forecast, which is de-normalized back to the input scale.

pub mod error;
pub mod numeric;
pub mod bench;
pub mod block;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod model;
mod params;
pub mod preprocessing;
pub mod training;

pub use error::{Error, Result};
