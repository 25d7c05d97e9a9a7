//! Blind image watermarking with a learned CNN block detector.
//!
//! One message bit is written into every 8x8 block by gradient descent on the
//! pixels against a small residual network; the network itself is learned by
//! alternating embedding, attack simulation and weight updates.

pub mod attacks;
pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod qim;
pub mod raster;
pub mod synth;
pub mod train;
pub mod watermark;

pub use error::{Error, Result};
