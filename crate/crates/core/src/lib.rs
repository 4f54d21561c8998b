//! Statistically precoded space-time-frequency block codes (STFBC) for
//! multiuser MISO MC-CDMA downlinks.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: transmit-correlated multipath channels, per-subcarrier
//!   responses and inter-frame Jakes fading.
//! - [`precoder`]: the average pairwise-error-probability bound and the
//!   statistical precoder built from the correlation eigenspectrum
//!   (water-filling, equal power and single-beam allocations).
//! - [`stfbc`]: 16-QAM, Alamouti coding, Walsh-Hadamard spreading,
//!   equal-gain despreading and ML detection.
//! - [`link`]: the Monte Carlo engine and the baseline transmission schemes.
//! - [`cli`]: experiment presets, the key=value config format and CSV output.

pub mod channel;
pub mod cli;
pub mod error;
pub mod link;
mod linalg;
pub mod precoder;
pub mod stfbc;

pub use error::{Error, Result};
pub use linalg::CMatrix;
pub use num_complex::Complex64;
