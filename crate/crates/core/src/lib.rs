//! Discretized log-Gaussian Cox processes on a regular grid.
//!
//! The crate covers the full workflow for a point pattern in a rectangular
//! window:
//!
//! * [`geometry`]: grid discretization, point binning and the block-circulant
//!   torus embedding whose FFT diagonalization powers every large matrix
//!   product.
//! * [`correlation`]: power-exponential and Matérn correlation functions,
//!   the half-correlation distance and least-squares family matching.
//! * [`simulate`]: exact Gaussian random field draws through the embedding and
//!   Poisson point patterns from the induced intensity.
//! * [`posterior`]: the whitened log-posterior and its analytic gradient,
//!   including the decay-parameter derivative evaluated spectrally.
//! * [`hmc`]: Hamiltonian Monte Carlo with Poisson trajectory lengths and
//!   dual-averaging step size adaptation.
//! * [`vb`]: mean-field variational Bayes with Laplace-approximated field
//!   updates.
//! * [`estimation`]: Ripley K / L estimators and minimum-contrast fitting.
//! * [`diagnostics`]: posterior predictive L-function checks and replicate
//!   study tables.
//! * [`cli`]: configuration, file formats and the command-line workflows.

pub mod cli;
pub mod correlation;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod hmc;
pub mod lsq;
pub mod posterior;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stats;
pub mod vb;

pub use correlation::CorrelationModel;
pub use error::{LgcpError, Result};
pub use geometry::{CellCounts, GridSpec, Rect, SpectralPower, TorusEmbedding};
pub use posterior::{HyperParams, LatentGamma, PriorSpec};
pub use simulate::{LatentField, PointPattern};
