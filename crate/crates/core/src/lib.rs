//! Core library for exploring a parametric generative-art design space.
//!
//! The crate is organised around the artist's workflow:
//!
//! * [`dataset`] loads specimens (genotype, image, evaluation) and keeps the
//!   append-only evaluation ledger.
//! * [`measures`] computes the seven per-image aesthetic measures and
//!   [`stats`] relates them to scores and categories.
//! * [`embed`] produces PCA / exact t-SNE maps of genotype and feature space.
//! * [`learn`] is the small MLP kernel shared by the phenotype-side
//!   [`features`] heads and the genotype-side [`genopredict`] predictors.
//! * [`explore`] builds cross-section maps, scans for category transitions and
//!   proposes new genotypes, with a built-in toy generator.
//! * [`synth`] writes seeded synthetic datasets for demos and tests.

pub mod dataset;
pub mod embed;
pub mod explore;
pub mod features;
pub mod genopredict;
pub mod learn;
pub mod measures;
pub mod model;
pub mod stats;
pub mod synth;

mod util;

pub use util::config_hash;

pub use dataset::{Dataset, Evaluation, Genotype, GenotypeBounds, Ledger, LedgerEntry, Specimen, Split};
pub use measures::{GrayImage, MeasureRecord, SComplexParams};
pub use model::{Prediction, PredictorModel};

/// Number of generative parameters in a genotype.
pub const GENOTYPE_DIM: usize = 12;

/// Length of the pretrained-network feature vectors.
pub const FEATURE_DIM: usize = 2048;

/// Number of score classes (integer scores 0 through 10).
pub const SCORE_CLASSES: usize = 11;
