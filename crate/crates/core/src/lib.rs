//! Semi-supervised GAN training with IPM critics.
//!
//! The critic shares its feature extractor Φ_ω with a K-class classifier and
//! is trained against a generator under one of several IPM constraints
//! (weight clipping, gradient penalty, Fisher, Sobolev, Fisher+Sobolev).
//! Everything runs on a small reverse-mode autodiff tape in `f64`.

pub mod config;
pub mod constraints;
pub mod critic;
pub mod data;
pub mod eval;
pub mod error;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
