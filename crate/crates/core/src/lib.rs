//! Out-of-distribution detection by kernel PCA reconstruction errors over
//! precomputed network features, with explicit random Fourier feature and
//! Nystrom maps of a cosine-normalized Gaussian kernel.

pub mod cli;
pub(crate) mod codec;
pub mod detectors;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod maps;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
