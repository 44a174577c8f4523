//! Spectral unmixing of simulated multispectral images.
//!
//! A hyperspectral cube is integrated against camera sensitivity curves to
//! produce a multispectral cube ([`bandsim`]). Endmembers are then extracted
//! with VCA, N-FINDR or NMF ([`extraction`]), fractional abundances solved by
//! fully constrained least squares ([`abundance`]), and results scored by
//! spectral angle and summed absolute abundance difference ([`metrics`]).
//!
//! Randomized routines take an explicit `u64` seed and draw from ChaCha8.

pub mod abundance;
pub mod bandsim;
pub mod error;
pub mod extraction;
pub mod io;
pub mod metrics;
pub mod scene;
pub mod spectral;

pub use error::{Error, Position, Result};
pub use spectral::{AbundanceField, BandKind, EndmemberSet, SpectralCube, Spectrum, WavelengthAxis};
