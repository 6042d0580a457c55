//! Cascade stacking ensemble for staging liver steatosis from routine
//! laboratory and anthropometric features.
//!
//! The pipeline groups subjects by which of three nested feature tiers they
//! satisfy, trains a screened ensemble of base classifiers on the
//! smallest-tier cohort, and stacks two meta-networks on top: each deeper
//! layer consumes its tier's raw features concatenated with the upstream
//! layers' class-probability outputs. Records route to the deepest layer
//! their available features support.

pub mod cascade;
pub mod error;
pub mod ingest;
pub mod learners;
pub mod metrics;
pub mod rng;
pub mod schema;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
pub use learners::{ClassifierFamily, ClassifierSpec, Probabilities, TrainedClassifier};
pub use schema::{Feature, FeatureSet, SteatosisGrade, SubjectRecord, Tier};
