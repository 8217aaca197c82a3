//! Relation-fact visual question answering.
//!
//! - [`builder`]: fact-aligned dataset construction.
//! - [`encoders`]: question GRU encoder and image feature providers.
//! - [`detector`]: relation fact detector over (subject, relation, object).
//! - [`msan`]: multi-step visual → semantic attention answer model.
//! - [`harness`]: metrics, evaluation, configuration and case-study dumps.

pub mod builder;
pub mod checksum;
pub mod detector;
pub mod encoders;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod msan;

pub use error::{CoreError, Result};
