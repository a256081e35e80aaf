//! Phaseless beam alignment with sparse bipartite graph codes.
//!
//! The pipeline: draw a graph ensemble ([`encoder`]), measure a sparse
//! beam-space channel through hybrid precoders ([`beamspace`]), then recover
//! magnitudes with [`decoder`] (noiseless) or [`robust`] (noisy).
//! [`theory`] holds the closed-form success probabilities and [`harness`]
//! the Monte Carlo runner behind the `sbgcode` binary.

pub mod beamspace;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod robust;
pub mod theory;

pub use error::{Error, Result};
