//! Endmember extraction: VCA, N-FINDR and multiplicative-update NMF.
//!
//! All three take a bands x pixels table (see [`crate::spectral::flatten`])
//! and an [`ExtractionConfig`]. Randomness comes only from
//! [`seeded_rng`], a ChaCha8 stream keyed by the 64-bit seed, so identical
//! inputs give bit-identical results.

mod nfindr;
mod nmf;
mod subspace;
mod vca;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::EndmemberSet;

pub use nfindr::{nfindr, simplex_volume};
pub use nmf::{nmf, nmf_with_init, NMF_EPSILON};
pub use subspace::{project_subspace, Subspace};
pub use vca::vca;

/// The generator behind every randomized step: ChaCha8 seeded with
/// `rand_chacha`'s `seed_from_u64`.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Vca,
    Nfindr,
    Nmf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vca, Method::Nmf, Method::Nfindr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vca => "vca",
            Method::Nfindr => "nfindr",
            Method::Nmf => "nmf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "vca" => Ok(Method::Vca),
            "nfindr" => Ok(Method::Nfindr),
            "nmf" => Ok(Method::Nmf),
            other => Err(Error::Config(format!("unknown method '{other}' (expected vca, nfindr or nmf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    /// Number of endmembers.
    pub p: usize,
    pub seed: u64,
    /// NMF iterations or N-FINDR sweeps (also the N-FINDR reseed budget).
    pub max_iter: usize,
    /// NMF stops once the relative objective decrease drops below this.
    pub tol: f64,
}

impl ExtractionConfig {
    pub fn new(p: usize, seed: u64) -> Self {
        ExtractionConfig {
            p,
            seed,
            max_iter: 1000,
            tol: 1e-9,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("endmember count must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("tol must be finite and > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub endmembers: EndmemberSet,
    pub method: Method,
    /// Selected source pixels (VCA and N-FINDR).
    pub pixel_indices: Option<Vec<usize>>,
    /// NMF: Frobenius error after each accepted update.
    /// N-FINDR: simplex volume at start and after each sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// NMF abundance factor (p x pixels).
    pub abundances: Option<DMatrix<f64>>,
}

/// Run `method` on a bands x pixels table.
pub fn extract(
    method: Method,
    data: &DMatrix<f64>,
    axis: &crate::spectral::WavelengthAxis,
    config: &ExtractionConfig,
) -> Result<ExtractionResult> {
    match method {
        Method::Vca => vca(data, axis, config),
        Method::Nfindr => nfindr(data, axis, config),
        Method::Nmf => nmf(data, axis, config),
    }
}

/// Scale each pixel column to unit L2 norm; all-zero columns are left alone.
pub fn normalize_pixels(data: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = data.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    out
}

pub(crate) fn check_table(data: &DMatrix<f64>, p: usize) -> Result<()> {
    if data.ncols() < p {
        return Err(Error::Shape(format!(
            "{} pixels is fewer than the {p} endmembers requested",
            data.ncols()
        )));
    }
    if p > data.nrows() {
        return Err(Error::Shape(format!(
            "{p} endmembers exceed the {} bands",
            data.nrows()
        )));
    }
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Shape(format!("data contains non-finite value {v}")));
    }
    Ok(())
}

pub(crate) fn all_columns_identical(data: &DMatrix<f64>) -> bool {
    let first = data.column(0);
    data.column_iter().all(|c| c == first)
}

pub(crate) fn pick_columns(data: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), indices.len(), |b, k| data[(b, indices[k])])
}
