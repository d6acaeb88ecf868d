//! Channel charting on synthetic urban vehicular channels.

pub mod baselines;
pub mod channel;
pub mod charting;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod raytrace;
pub mod scene;
pub mod seeds;

pub use error::{Error, Result};
