//! Experiment driver for diversity-sampled synthetic note augmentation:
//! configuration, seed derivation, content-addressed stages, the
//! four-condition runner, report writing and a constructed corpus for
//! offline runs.

pub mod condition;
pub mod config;
pub mod error;
pub mod mockdata;
pub mod report;
pub mod seeds;
pub mod stages;

pub use condition::{prepare_entity, run_condition, run_methods, ConditionRun, EntityData, Services};
pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
