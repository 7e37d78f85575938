//! Synthetic image dataset generation driven by a chat model.
//!
//! A label word is expanded by a chat model into generation prompts; the best
//! generated image is labelled, then repeatedly given new backgrounds and
//! extra objects, relabelled and gated on pixel fidelity, object presence
//! and text-image similarity. Retained images land in a content-addressed
//! store with full edit lineage and can be exported as COCO-style JSON.

pub mod cli;
pub mod config;
pub mod gate;
pub mod gateway;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod pipeline;
pub mod store;
