//! Generalized time-domain velocity vector (GTVV) analysis for Ambisonic
//! recordings.
//!
//! The crate covers the whole chain from scene synthesis to parameter
//! inference:
//!
//! - [`sh`]: real SN3D/ACN spherical harmonics, direction grids and
//!   reference beams.
//! - [`room`]: image-source shoebox scenes with exact ground truth, Ambisonic
//!   encoding and calibrated noise.
//! - [`spectral`]: STFT front end and the GFVV to GTVV inverse transform.
//! - [`velocity`]: instantaneous and least-squares GFVV estimators plus the
//!   closed-form GTVV series used as an oracle.
//! - [`somp`]: simultaneous orthogonal matching pursuit over the SH
//!   dictionary, and matching of estimates against ground truth.
//! - [`baselines`]: omni-referenced H-TDVV and a steered-response-power map.
//! - [`eval`]: experiment orchestration and result tables.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Both paths
//! produce bit-identical results.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod fdelay;
pub mod io;
mod par;
pub mod room;
pub mod sh;
pub mod somp;
pub mod spectral;
pub mod velocity;

pub use error::{GtvvError, Result};
pub use num_complex::Complex64;
