//! Generative adversarial query network at desk scale.

pub mod dataset;
pub mod discriminator;
pub mod draw;
pub mod encoder;
mod error;
pub mod eval;
pub mod losses;
pub mod params;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
