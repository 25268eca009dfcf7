//! Scale-invariance toolkit for natural-image statistics.
//!
//! The pipeline starts from zero-mean log-contrast fields ([`image`]),
//! builds standardized pixel and gradient distributions across length
//! scales ([`stats`]), measures ensemble power spectra and their log-log
//! slopes ([`spectral`]), and generates synthetic images with a
//! patch-stamping occlusion model whose stationary spectra obey the
//! f^γ collapse law ([`deadleaves`], [`scaling`]). Everything is seeded
//! and deterministic, including parallel runs.

pub mod cli;
pub mod config;
pub mod deadleaves;
pub mod error;
pub mod image;
pub mod rng;
pub mod scaling;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
