//! Contrastive explanations for classifiers with a linear final layer.
//!
//! The pipeline: isolate the latent direction separating a predicted class
//! (the fact) from an alternative (the foil), intervene on input factors or
//! concepts, and rank factors and foils by how much the fact/foil decision
//! shifts. A desk-scale trainable bag-of-features classifier and a
//! data-staining harness make every claim testable without large models.

pub mod amnesic;
pub mod contrastive;
pub mod error;
pub mod interventions;
pub mod model;
pub mod numerics;
pub mod par;
pub mod ranking;
pub mod staining;

pub use error::{Error, Result};
