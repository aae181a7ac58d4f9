//! Diversity-sampled few-shot synthetic text generation and its evaluation.
//!
//! The modules follow the pipeline order: [`corpus`] loads and splits notes,
//! [`embed`] turns them into vectors, [`reduce`] and [`cluster`] pick diverse
//! exemplars, [`label`], [`promptgen`] and [`generate`] produce synthetic
//! notes, and [`metrics`] scores the augmentation learning curves.

pub mod chat;
pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod generate;
pub mod label;
pub mod metrics;
pub mod par;
pub mod promptgen;
pub mod reduce;
pub mod rng;
pub mod templates;

pub use error::{Error, Result};
