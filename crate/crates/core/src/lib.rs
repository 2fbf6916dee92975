//! Dual-stage dataset distillation on desk-scale synthetic data.
//!
//! Stage I ([`distill`]) compresses a labeled dataset into a handful of points
//! per class by distribution matching over random frozen embedders. Stage II
//! ([`refine`]) pushes every distilled point through a small latent diffusion
//! model: the point is encoded ([`codec`]), partially noised, and denoised with
//! classifier-free guidance ([`denoiser`]) plus a gradient-free pull back toward
//! its own latent code during the semantic phase of the reverse trajectory.
//! [`evaluate`] trains a heterogeneous classifier zoo on the results and reports
//! prior-architecture and cross-architecture accuracy.

pub mod codec;
pub mod datagen;
pub mod denoiser;
pub mod distill;
pub mod error;
pub mod evaluate;
pub mod format;
pub mod nn;
pub mod refine;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
