//! Single-coil cine cardiac MRI reconstruction.
//!
//! The crate simulates Cartesian k-space undersampling of synthetic cine
//! phantoms, reconstructs image sequences with a convolutional recurrent
//! network (CRNN) interleaved with data consistency, optionally refines the
//! result with a lightweight downsample/denoise/upsample module, and scores
//! reconstructions with SSIM, NMSE and PSNR under both full-image and
//! challenge-crop protocols.

pub mod error;
pub mod harness;
pub mod io;
pub mod kspace;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
mod serde_float;

pub use error::{ReconError, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex<f64>;
