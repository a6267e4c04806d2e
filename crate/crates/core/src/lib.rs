//! Constrained pushforward maps between two empirical distributions, built
//! from composed normalizing flows.

mod error;

pub mod datagen;
pub mod diffengine;
pub mod evalharness;
pub mod flows;
pub mod latent;
pub mod losses;
pub mod pushforward;

pub use error::{Error, Result};
