pub mod baselines;
pub mod cli;
pub mod config;
pub mod detections;
pub mod error;
pub mod geometry;
pub mod imitator;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod raster;
pub mod scene;
pub mod seed;
pub mod simloop;
pub mod trainer;

pub use error::{Error, Result};
