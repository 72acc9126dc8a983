//! Noise-variance and covariance estimation in the spiked model.
//!
//! Sample covariance eigenvalues feed an unbiased estimate of Haff risk
//! ([`ure`]); minimising its dominant term over the noise level gives a closed-form
//! estimator ([`noise`]), which together with spike estimates and a data-driven
//! rank yields the covariance estimator in [`spiked`]. [`asymptotics`] holds the
//! random-matrix limits these estimators are checked against, [`benchmarks`] the
//! competitor estimators and [`harness`] the Monte Carlo machinery.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod benchmarks;
pub mod error;
pub mod harness;
pub mod model;
pub mod noise;
pub mod numeric;
pub mod spectra;
pub mod spiked;
pub mod ure;

pub use error::{Error, Result};
pub use harness::{EstimatorKind, ExperimentConfig, LossKind, RiskReport};
pub use model::{ArModel, CovarianceModel, SampleSpec, SpikedModel};
pub use noise::NoiseSolution;
pub use spectra::{decompose, SpectralData};
pub use spiked::{RankDiagnostics, SpikedEstimate, SpikedEstimator};
pub use ure::{EigenvalueEstimate, EstimatorProfile, Truth, UreValue};

pub use nalgebra::DMatrix;
