//! Eye-tracking and input analytics for esports sessions: log ingestion,
//! gaze preprocessing, zone-of-interest distributions, PCA and KDE, input
//! features and a seeded synthetic session generator.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod features;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod zones;

pub use model::{Cohort, PlayerMeta, Session};
