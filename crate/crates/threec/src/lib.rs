//! Cross-classification clustering (3C) for volumetric instance segmentation.
//!
//! The library turns the multi-object seed-transfer problem into a fixed
//! number of independent per-digit classifications: instance labels are
//! encoded as length-k strings over an l-symbol alphabet, each digit image
//! is transferred from a source section to a target section by a classifier,
//! and the per-pixel tuple of predicted symbols is decoded back to instance
//! labels. Transferred predictions are then agglomerated across sections
//! into 3-D consistent objects via an overlap graph.
//!
//! Modules follow the processing order:
//!
//! * [`volume`] — stacks of 2-D sections and the VOL1 binary format
//! * [`synthgen`] — synthetic ground truth and border elevation maps
//! * [`seeding`] — per-section 2-D over-segmentation (regional minima + growth)
//! * [`encoding`] — the combinatorial codebook and per-digit (de)coding
//! * [`transfer`] — per-digit classifiers and the cross-classification step
//! * [`agglomeration`] — overlap graph, merging, orphan resolution
//! * [`metrics`] — adapted Rand error and variation of information
//! * [`costmodel`] — classifier-call accounting vs single-object tracking
//! * [`pipeline`] — end-to-end streaming orchestration and run reports

pub mod agglomeration;
pub mod costmodel;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod seeding;
pub mod synthgen;
pub mod transfer;
pub mod volume;

pub use error::{Error, Result};
