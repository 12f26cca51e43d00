//! Diagnostic quality assessment for low-dimensional ECG representations.
//!
//! The crate is organised around the life cycle of a blinded rater study:
//!
//! * [`signal_io`] loads recordings, cuts strips and computes ECG-grid geometry.
//! * [`beat_model`] is the reference representation under test: adaptive Hermite
//!   functions, sigmoids and a spline baseline fitted by separable least squares.
//! * [`distortion_metrics`] holds the objective measures (PRD, WWPRD, WEDD) and the
//!   periodic DWT they are computed on.
//! * [`agreement_stats`] computes Cohen's kappa, its maximum, standard error and
//!   interval from contingency tables.
//! * [`study_builder`] lays out blinded, pseudo-randomised work packages.
//! * [`session`] is the append-only response store behind the rater service.
//! * [`analysis_report`] joins responses with the blinding key and produces the
//!   between-method, inter-rater and within-observer reports.
//!
//! Batch entry points take an [`Execution`] so the same code runs on the rayon
//! pool or sequentially. Building without the `parallel` feature removes rayon
//! and every batch runs sequentially.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agreement_stats;
pub mod analysis_report;
pub mod beat_model;
pub mod distortion_metrics;
pub mod par;
pub mod questionnaire;
pub mod session;
pub mod signal_io;
pub mod study_builder;
pub mod synth;

pub use par::Execution;
