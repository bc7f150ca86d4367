//! Multi-person 3D motion prediction with a social-aware transformer.
//!
//! Observed poses are turned into frame-to-frame displacements, cut into
//! overlapping windows, and encoded per window by a stack of graph
//! convolutions ([`dse`]). The window features of all persons are
//! flattened into one sequence and passed through attention layers whose
//! scores and values are biased by bucketed inter-person root distances
//! ([`sie`]). A transformer decoder ([`predictor`]) turns each person's
//! latest window into a query and emits the next window of displacements,
//! recursively for longer horizons.

// Validation uses negated float comparisons on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod motion;
pub mod spectral;
pub mod config;
pub mod layers;
pub mod dse;
pub mod sie;
pub mod predictor;
pub mod model;
pub mod training;
pub mod metrics;

pub use error::{Result, SomoError};
