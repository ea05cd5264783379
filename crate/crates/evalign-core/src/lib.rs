//! Core library: event-frame construction, the trainable event encoder with
//! its frozen image/text teachers, contrastive training, and the evaluation
//! surface (zero-shot, few-shot, fine-tune, anomaly AUC, retrieval).

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod event;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod seeding;
pub mod synth;
pub mod train;
pub mod video;

pub use error::{Error, Result};
