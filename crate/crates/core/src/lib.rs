//! Link-level digital twin of a regularized zero-forcing (RZF) precoded
//! MU-MISO downlink with imperfect channel state information, plus the
//! machinery to auto-tune it:
//!
//! - [`channel`]: correlated Rayleigh channels and their corrupted estimates.
//! - [`link_sim`]: frame-level QPSK transmission, SINR / MSE / SER indicators,
//!   and the unknown-interference SNR impairment.
//! - [`det_equiv`]: large-system deterministic equivalents of SINR and MSE
//!   for four correlation/uncertainty regimes, with closed-form optimal
//!   receive scaling.
//! - [`nn`]: a small dense network engine (batch norm, ReLU, a clamped
//!   power-of-ten output activation, manual backprop, mini-batch GD).
//! - [`predictor`]: learnable model-driven performance predictors that
//!   refine the deterministic equivalents with a learned elementwise
//!   affine correction.
//! - [`optimizer`]: CSI-uncertainty estimation by nested grid search,
//!   regularization-term search, and deep-unfolded projected gradient
//!   descent for receive power scaling.
//! - [`harness`]: reproducible experiment drivers emitting CSV tables.

pub mod channel;
pub mod det_equiv;
pub mod harness;
pub mod linalg;
pub mod link_sim;
pub mod nn;
pub mod optimizer;
pub mod predictor;
pub mod rng;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::NumericalFailure(msg.into())
}
