//! Volatility-modulated Lévy-driven Volterra (VMLV) and Lévy semistationary
//! (LSS) processes for energy spot prices.
//!
//! ```text
//! Y_t = mu + int_{-inf}^t g(t-s) w_{s-} dL_s + int_{-inf}^t q(t-s) a_s ds
//! ```
//!
//! The crate covers simulation, second-order structure, forward pricing under
//! Esscher and Girsanov measure changes, Fourier option pricing and the
//! calibration workflow on spot-price series.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod distributions;
pub mod error;
pub mod forward;
pub mod kernels;
pub mod levy;
pub mod lss;
pub mod optim;
pub mod options;
pub mod quad;
pub mod rng;
pub mod specfun;
pub mod spot;
pub mod volatility;

pub use error::{LssError, Result};
