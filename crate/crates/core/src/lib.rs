//! Pun detection and location with pronunciation-aware attention.

mod binio;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod heads;
pub mod numerics;
pub mod phonattn;
pub mod phonodict;

pub use error::{PunError, Result};
