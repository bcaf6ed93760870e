//! Reconstruction of the force-time response of micropillar compression
//! tests from their acoustic-emission (AE) recordings.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`] holds the paired AE/force traces, normalisation and windowing.
//! * [`wavelet`] computes gaus3 continuous wavelet spectrograms.
//! * [`features`] turns AE windows into moment, spectrogram and event features.
//! * [`forest`] is a CART random-forest regressor with grid-search CV.
//! * [`pipeline`] wires fine-scale increments, coarse-scale anchors, the
//!   combination recurrence, importance analyses and the transfer harness.
//! * [`stats`] computes force-drop and waiting-time statistics and spectra.
//! * [`synth`] generates synthetic experiments with known ground truth.
//! * [`io`] reads and writes the canonical experiment directory format.
//! * [`config`] is the flat dotted-key run configuration.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod features;
pub mod forest;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
