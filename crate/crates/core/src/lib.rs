//! Acoustic-to-articulatory speech inversion.
//!
//! The crate covers the whole pipeline: a synthetic articulatory corpus with
//! speaker-independent splits, audio augmentation with exact SNR semantics,
//! MFCC / melspectrogram features, a masked bidirectional recurrent
//! regression network with analytic gradients, correlation-based losses, and
//! the training, adaptation and evaluation protocols built on top of them.

pub mod audio;
pub mod augment;
pub mod binfmt;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod losses_metrics;
pub mod neural;
pub mod report;
pub mod seeding;
pub mod training;

pub use error::{Error, ErrorKind, Result};

/// Tract variable names, in the fixed channel order used everywhere.
pub const TV_NAMES: [&str; 6] = ["LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD"];

/// Number of tract variables predicted per frame.
pub const N_TVS: usize = 6;
