//! Cybersickness prediction from VR session telemetry.
//!
//! The pipeline runs from raw recorded sessions to cross-validated accuracy
//! reports:
//!
//! - [`telemetry`]: session data model, on-disk format, ground-truth labels and
//!   a synthetic session generator.
//! - [`sigproc`]: downsampling, EDA tonic/phasic decomposition, SCR event
//!   detection, trailing-window statistics and min-max normalization.
//! - [`features`]: segmentation and the three per-segment feature blocks
//!   (kinematic time series, EDA time series, EDA numerical vector).
//! - [`nnet`]: a small deterministic LSTM/dense engine with backpropagation
//!   through time, Adam and checkpointing.
//! - [`models`]: the four classifier architectures and teacher/student
//!   distillation.
//! - [`stats`]: t-test, Pearson correlation, chi-square and the special
//!   functions behind their p-values.
//! - [`experiments`]: k-fold cross-validation, time-span and exposure sweeps,
//!   random search and CSV reports.

pub mod experiments;
pub mod features;
pub mod models;
pub mod nnet;
pub mod rng;
pub mod sigproc;
pub mod stats;
pub mod telemetry;
