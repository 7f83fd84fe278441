//! Multi-exposure image fusion in the spatial and frequency domains.
//!
//! The crate is organised bottom-up: [`image`] and [`spectrum`] are plain
//! numerics, [`tensor`] is a small reverse-mode differentiation engine,
//! [`network`] and [`loss`] define the fusion model and its objective,
//! [`training`] optimizes it, and [`metrics`] scores fused results.

pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod spectrum;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::{PlanarImage, Plane, SampleRange, YCbCrImage};
pub use network::{ModelConfig, ModelParams};
pub use spectrum::Spectrum;
pub use tensor::{Graph, Shape, Tensor, Var};
