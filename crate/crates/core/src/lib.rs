//! Two-detector gravitational-wave search pipeline.
//!
//! The crate covers the full desk-scale workflow:
//!
//! - [`synth`] generates synthetic strain: Newtonian chirps, colored Gaussian
//!   noise from an analytic PSD, sine-Gaussian glitches, SNR-controlled
//!   injections, and the three datasets used downstream.
//! - [`dsp`] holds the frequency-domain primitives (DFT, Welch PSD,
//!   whitening, high-pass, whitened inner products, optimal SNR).
//! - [`cnn`] is a from-scratch trainable 1-D convolutional network over
//!   (channel, detector, time) tensors, with a capture hook on the final
//!   convolutional layer.
//! - [`features`] turns captured feature maps into the five-component
//!   vector (variance, SNR, overlap, peak amplitude, CNN output) consumed by
//!   the random forest in [`forest`].
//! - [`search`] slides a 1 s window over long recordings, thresholds scores
//!   into triggers, and clusters triggers into events.
//! - [`evaluation`] computes false-alarm-rate curves, sensitive fractions,
//!   per-SNR sensitivity, OvR ROC/AUC, and the report files.
//! - [`pipeline`] chains everything under one [`config::PipelineConfig`].
//!
//! Numeric kernels are generic over [`scalar::Scalar`] so the same code runs
//! in `f32` for production weights and in `f64` for gradient checks and
//! oracle comparisons; concrete aliases live at the crate root.

pub mod cnn;
pub mod config;
pub mod dataio;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod synth;

pub use error::{Error, Result};

/// Precision used for all signal processing and feature math.
pub type Sample = f64;
/// Precision used for stored network weights.
pub type Weight = f32;

/// A per-detector time series at the working precision.
pub type Series = dsp::RealSeries<Sample>;
/// One-sided PSD estimate at the working precision.
pub type Psd = dsp::PsdEstimate<Sample>;
/// One-sided spectrum at the working precision.
pub type SpectrumF64 = dsp::Spectrum<Sample>;
/// Network activation tensor at production precision.
pub type Tensor = cnn::Tensor3<Weight>;
/// Final-convolutional-layer output at feature-math precision.
pub type FeatureMaps = cnn::Tensor3<Sample>;
