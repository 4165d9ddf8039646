//! Representational similarity tooling for studying how small VAEs learn.
//!
//! * [`metrics`]: linear CKA and orthogonal Procrustes similarity.
//! * [`synthbench`]: controlled feature-overlap benchmark for those metrics.
//! * [`synthdata`]: sprite image domains with known factors.
//! * [`vae`]: a deterministic fully connected VAE with five objectives.
//! * [`diagnostics`]: latent statistics, collapse detection, transfer probes.
//! * [`heatmap`]: seed-averaged layer-by-layer similarity grids.
//! * [`io`]: binary activation/checkpoint formats and experiment configs.

pub mod diagnostics;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod synthbench;
pub mod synthdata;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::Matrix;
