//! Desk-scale testbed for instrumentation-supervised button pressing.
//!
//! The crate simulates a position-controlled fingertip pressing a snap-action
//! button, collects scripted demonstrations using the privileged button-state
//! channel, trains audio-conditioned diffusion policies, and evaluates them by
//! success rate and contact-force statistics.
//!
//! Module map:
//!
//! - [`sim`] — deterministic button-press simulator (images, contact audio,
//!   forces, privileged button state)
//! - [`dsp`] — audio front end (resampling, 298x128 log-Mel spectrograms,
//!   normalization)
//! - [`nn`] — minimal differentiable-computation substrate (layers,
//!   reverse-mode gradients, Adam, warmup-cosine schedule, checkpoints)
//! - [`percept`] — vision/audio encoders and the click detector
//! - [`data`] — demonstration collection, episode persistence, augmentation
//! - [`policy`] — conditional diffusion policy and its four conditioning
//!   variants
//! - [`eval`] — rollout harness, Wasserstein-1 distance, Beta credible
//!   intervals, report emission
//! - [`config`] — merged run configuration and content hashing
//! - [`pipeline`] — end-to-end stage orchestration shared by the CLI

pub mod config;
pub mod data;
pub mod dsp;
pub mod eval;
pub mod nn;
pub mod percept;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sim;
