//! Relative transfer function (RTF) vector estimation for acoustic sensor
//! networks whose noise is uncorrelated between nodes.
//!
//! Four estimators are provided, all operating per frequency bin on batch
//! covariance estimates:
//!
//! - [`estimators::rtf_biased`]: principal eigenvector of the noisy covariance.
//! - [`estimators::rtf_cw`]: covariance whitening with the full noise covariance.
//! - [`estimators::rtf_cw_d`]: covariance whitening with only the node-wise
//!   diagonal blocks of the noise covariance.
//! - [`estimators::rtf_ods`]: rank-1 fit to the inter-node (off-diagonal)
//!   blocks of the noisy covariance, solved with L-BFGS.
//!
//! The estimates feed an MVDR beamformer ([`beamformer`]) and are scored with
//! the Hermitian angle and (intelligibility-weighted) SNR improvement
//! ([`metrics`]). [`scene`] generates synthetic STFT-domain scenes with exact
//! ground truth, and [`experiment`] drives seeded Monte-Carlo sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beamformer;
pub mod covariance;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod layout;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod scene;
pub mod seed;
pub mod stft;

pub use error::{Error, Result};
pub use exec::Exec;
pub use layout::NodeLayout;
pub use linalg::{CMatrix, HermitianMatrix};
pub use num_complex::Complex64;
