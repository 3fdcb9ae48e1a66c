//! Patient-grouped training and evaluation of a residual CNN for fetal
//! central-nervous-system anomaly classification from ultrasound frames.

pub mod corpus;
pub mod error;
pub mod explain;
pub mod imaging;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod reader;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
