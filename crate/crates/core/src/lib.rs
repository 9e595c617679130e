//! Activity-chain reconstruction from coarse mobile-phone records.
//!
//! Stages, in pipeline order: [`ingest`], [`staydetect`], [`staylabel`],
//! [`bayes`], [`validate`], [`lda`], [`analytics`]. [`synth`] generates
//! synthetic inputs with ground truth.

pub mod analytics;
pub mod bayes;
pub mod config;
pub mod error;
pub mod ingest;
pub mod lda;
pub mod model;
pub mod pipeline;
pub mod staydetect;
pub mod staylabel;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
