//! Semantic-guided generative image augmentation.
//!
//! For every original image the pipeline:
//! 1. builds a textual label sentence and generates candidate captions,
//!    scoring each against the image and selecting one (`c*`, `s*`);
//! 2. concatenates label and caption into a weighted prompt, maps `s*` to a
//!    guidance scale, and asks an image-to-image diffusion backend for an
//!    augmented image at a configured noise rate.
//!
//! Around that core sit post-hoc filters, perturbation baselines, a
//! similarity/diversity metric and a linear-probe training harness for
//! relative comparisons. Every model role is a trait with a deterministic
//! fake implementation so the whole pipeline runs without model weights.

pub mod backends;
pub mod baselines;
pub mod captioning;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod filters;
pub mod generation;
pub mod imageio;
pub mod prompting;
pub mod seed;
pub mod synthetic;
pub mod trainer;
