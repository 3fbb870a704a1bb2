//! Actigraphy rest-activity analysis.
//!
//! The crate turns epoch-level accelerometer counts into per-subject activity
//! features and circadian rhythm parameters, then compares those across
//! subject groups with rank-based tests:
//!
//! - [`ingest`]: epoch CSV and cohort manifest parsing, synthetic series
//! - [`preprocess`]: vector magnitude, non-wear bouts, valid-day selection
//! - [`features`]: mean/SD, M10/L5, relative amplitude, RMSSD, immobility
//! - [`nls`]: linear least squares and Levenberg-Marquardt
//! - [`cosinor`]: linear and sigmoidally transformed cosine fits
//! - [`stats`]: Kruskal-Wallis, pairwise rank-sum tests, median/IQR tables
//! - [`report`]: cohort pipeline, group curves and SVG rendering

pub mod cosinor;
pub mod features;
pub mod format;
pub mod ingest;
pub mod nls;
pub mod preprocess;
pub mod report;
pub mod stats;

pub use cosinor::{FitConfig, LinearCosinorFit, SigmoidalCosinorFit, SigmoidalParams, Transform};
pub use features::{ActivityFeatures, FeatureConfig, MinuteProfile};
pub use ingest::{CohortEntry, CohortManifest, GroupLabel, SynthSpec, TriaxialSeries};
pub use preprocess::{ActivitySeries, NonwearBout};

/// Minutes in one calendar day.
pub const MINUTES_PER_DAY: usize = 1440;
