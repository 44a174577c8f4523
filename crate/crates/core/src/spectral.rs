//! Spectral data types and the linear mixing model.
//!
//! Everything here is immutable once constructed. Pixels are always stored
//! row-major (left to right, top to bottom) and every module relies on that
//! ordering.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) fn check_values(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        Some(index) => Err(Error::InvalidValue {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Strictly increasing wavelength samples in nanometers.
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthAxis(Arc<[f64]>);

impl WavelengthAxis {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidAxis(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (i, &w) in samples.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidAxis(format!(
                    "sample {i} is {w}; wavelengths must be finite and > 0"
                )));
            }
            if i > 0 && w <= samples[i - 1] {
                return Err(Error::InvalidAxis(format!(
                    "not strictly increasing at sample {i} ({} then {w})",
                    samples[i - 1]
                )));
            }
        }
        Ok(WavelengthAxis(samples.into()))
    }

    /// `count` evenly spaced samples from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidAxis(format!("need at least 2 samples, got {count}")));
        }
        let step = (end - start) / (count - 1) as f64;
        let mut samples: Vec<f64> = (0..count).map(|i| start + step * i as f64).collect();
        samples[count - 1] = end;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Same length and every sample within `rel` relative tolerance.
    ///
    /// Text formats store wavelengths at 9 significant digits, so axes read
    /// back from CSV are compared with this rather than `==`.
    pub fn approx_eq(&self, other: &WavelengthAxis, rel: f64) -> bool {
        self.len() == other.len()
            && self
                .0
                .iter()
                .zip(other.0.iter())
                .all(|(a, b)| (a - b).abs() <= rel * a.abs().max(b.abs()))
    }
}

/// Whether a band comes from a narrow selective filter or a broad
/// panchromatic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandKind {
    #[default]
    Selective,
    Panchromatic,
}

impl BandKind {
    pub fn is_panchromatic(self) -> bool {
        self == BandKind::Panchromatic
    }
}

/// Nonnegative values sampled on a wavelength axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    axis: WavelengthAxis,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(axis: WavelengthAxis, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.len() {
            return Err(Error::Shape(format!(
                "spectrum has {} values for {} wavelengths",
                values.len(),
                axis.len()
            )));
        }
        check_values("spectrum", &values)?;
        Ok(Spectrum { axis, values })
    }

    /// Constant spectrum, e.g. the unit illuminant.
    pub fn constant(axis: WavelengthAxis, value: f64) -> Result<Self> {
        let n = axis.len();
        Self::new(axis, vec![value; n])
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A width x height grid of band vectors on a shared axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    axis: WavelengthAxis,
    /// Band-interleaved-by-pixel: `data[pixel * bands + band]`.
    data: Vec<f64>,
    units: String,
    band_kinds: Vec<BandKind>,
    band_names: Option<Vec<String>>,
}

impl SpectralCube {
    pub fn new(
        width: usize,
        height: usize,
        axis: WavelengthAxis,
        data: Vec<f64>,
        units: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("cube must have at least one pixel, got {width}x{height}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(axis.len()))
            .ok_or_else(|| Error::Shape("cube dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "cube {width}x{height}x{} needs {expected} values, got {}",
                axis.len(),
                data.len()
            )));
        }
        check_values("cube", &data)?;
        let bands = axis.len();
        Ok(SpectralCube {
            width,
            height,
            axis,
            data,
            units: units.into(),
            band_kinds: vec![BandKind::Selective; bands],
            band_names: None,
        })
    }

    /// Attach per-band kinds and optional names (multispectral cubes).
    pub fn with_band_info(mut self, kinds: Vec<BandKind>, names: Option<Vec<String>>) -> Result<Self> {
        if kinds.len() != self.bands() {
            return Err(Error::Shape(format!(
                "{} band kinds for {} bands",
                kinds.len(),
                self.bands()
            )));
        }
        if let Some(n) = &names {
            if n.len() != self.bands() {
                return Err(Error::Shape(format!("{} band names for {} bands", n.len(), self.bands())));
            }
        }
        self.band_kinds = kinds;
        self.band_names = names;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.axis.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn band_kinds(&self) -> &[BandKind] {
        &self.band_kinds
    }

    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    /// Raw band-interleaved-by-pixel values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Band vector of pixel `index` in row-major order.
    pub fn pixel(&self, index: usize) -> &[f64] {
        let b = self.bands();
        &self.data[index * b..(index + 1) * b]
    }

    pub fn pixel_at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    pub fn pixel_spectrum(&self, index: usize) -> Spectrum {
        Spectrum {
            axis: self.axis.clone(),
            values: self.pixel(index).to_vec(),
        }
    }

    pub fn pixels(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.bands())
    }
}

/// `p` endmember signatures on a shared axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberSet {
    axis: WavelengthAxis,
    signatures: Vec<Vec<f64>>,
    names: Option<Vec<String>>,
    pixel_indices: Option<Vec<usize>>,
}

impl EndmemberSet {
    pub fn new(axis: WavelengthAxis, signatures: Vec<Vec<f64>>) -> Result<Self> {
        let p = signatures.len();
        if p == 0 || p > axis.len() {
            return Err(Error::Shape(format!(
                "endmember count {p} must be between 1 and the band count {}",
                axis.len()
            )));
        }
        for (k, s) in signatures.iter().enumerate() {
            if s.len() != axis.len() {
                return Err(Error::Shape(format!(
                    "endmember {k} has {} values for {} bands",
                    s.len(),
                    axis.len()
                )));
            }
            check_values("endmember", s)?;
        }
        Ok(EndmemberSet {
            axis,
            signatures,
            names: None,
            pixel_indices: None,
        })
    }

    /// Build from the columns of a bands x p matrix.
    pub fn from_columns(axis: WavelengthAxis, matrix: &DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != axis.len() {
            return Err(Error::Shape(format!(
                "endmember matrix has {} rows for {} bands",
                matrix.nrows(),
                axis.len()
            )));
        }
        let signatures = matrix.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self::new(axis, signatures)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.len() {
            return Err(Error::Shape(format!("{} names for {} endmembers", names.len(), self.len())));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_pixel_indices(mut self, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} pixel indices for {} endmembers",
                indices.len(),
                self.len()
            )));
        }
        self.pixel_indices = Some(indices);
        Ok(self)
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    /// Number of endmembers `p`.
    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn signature(&self, k: usize) -> &[f64] {
        &self.signatures[k]
    }

    pub fn signatures(&self) -> &[Vec<f64>] {
        &self.signatures
    }

    pub fn spectrum(&self, k: usize) -> Spectrum {
        Spectrum {
            axis: self.axis.clone(),
            values: self.signatures[k].clone(),
        }
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Supplied name, or `em{k+1}`.
    pub fn name(&self, k: usize) -> String {
        match &self.names {
            Some(n) => n[k].clone(),
            None => format!("em{}", k + 1),
        }
    }

    pub fn pixel_indices(&self) -> Option<&[usize]> {
        self.pixel_indices.as_deref()
    }

    /// bands x p matrix, one signature per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.axis.len(), self.len(), |b, k| self.signatures[k][b])
    }

    /// Reorder so that output slot `i` holds endmember `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&k| k >= self.len() || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::Shape("reorder is not a permutation".into()));
        }
        Ok(EndmemberSet {
            axis: self.axis.clone(),
            signatures: order.iter().map(|&k| self.signatures[k].clone()).collect(),
            names: self.names.as_ref().map(|n| order.iter().map(|&k| n[k].clone()).collect()),
            pixel_indices: self.pixel_indices.as_ref().map(|ix| order.iter().map(|&k| ix[k]).collect()),
        })
    }
}

/// Per-pixel endmember fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceField {
    width: usize,
    height: usize,
    p: usize,
    /// Pixel-major: `fractions[pixel * p + k]`.
    fractions: Vec<f64>,
    sum_to_one: bool,
}

/// Tolerance on per-pixel sums when the sum-to-one flag is set.
pub const SUM_TO_ONE_TOL: f64 = 1e-6;

impl AbundanceField {
    pub fn new(width: usize, height: usize, p: usize, fractions: Vec<f64>, sum_to_one: bool) -> Result<Self> {
        if width == 0 || height == 0 || p == 0 {
            return Err(Error::Shape(format!("abundance field {width}x{height} with p={p}")));
        }
        if fractions.len() != width * height * p {
            return Err(Error::Shape(format!(
                "abundance field {width}x{height}x{p} needs {} values, got {}",
                width * height * p,
                fractions.len()
            )));
        }
        check_values("abundance", &fractions)?;
        if sum_to_one {
            for (i, row) in fractions.chunks_exact(p).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > SUM_TO_ONE_TOL {
                    return Err(Error::Shape(format!("pixel {i} fractions sum to {s}, expected 1")));
                }
            }
        }
        Ok(AbundanceField {
            width,
            height,
            p,
            fractions,
            sum_to_one,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn endmember_count(&self) -> usize {
        self.p
    }

    pub fn sum_to_one(&self) -> bool {
        self.sum_to_one
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.fractions[index * self.p..(index + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.fractions.chunks_exact(self.p)
    }

    /// Map of endmember `k` in row-major pixel order.
    pub fn map(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// p x pixels matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.num_pixels(), |k, j| self.fractions[j * self.p + k])
    }

    /// Move column `k` of every row to slot `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.p {
            return Err(Error::Shape(format!("permutation of length {} for p={}", perm.len(), self.p)));
        }
        let mut out = vec![0.0; self.fractions.len()];
        for (row_in, row_out) in self.fractions.chunks_exact(self.p).zip(out.chunks_exact_mut(self.p)) {
            for (k, &dst) in perm.iter().enumerate() {
                row_out[dst] = row_in[k];
            }
        }
        Self::new(self.width, self.height, self.p, out, self.sum_to_one)
    }
}

/// Fraction-weighted sum of endmember signatures.
pub fn mix(endmembers: &EndmemberSet, fractions: &[f64]) -> Result<Spectrum> {
    if fractions.len() != endmembers.len() {
        return Err(Error::Shape(format!(
            "{} fractions for {} endmembers",
            fractions.len(),
            endmembers.len()
        )));
    }
    check_values("fraction", fractions)?;
    let mut values = vec![0.0; endmembers.axis().len()];
    for (sig, &f) in endmembers.signatures().iter().zip(fractions) {
        for (v, s) in values.iter_mut().zip(sig) {
            *v += f * s;
        }
    }
    Spectrum::new(endmembers.axis().clone(), values)
}

/// bands x pixels table; column `j` is pixel `j` in row-major order.
pub fn flatten(cube: &SpectralCube) -> DMatrix<f64> {
    DMatrix::from_column_slice(cube.bands(), cube.num_pixels(), cube.data())
}

/// Inverse of [`flatten`].
pub fn unflatten(
    table: &DMatrix<f64>,
    width: usize,
    height: usize,
    axis: WavelengthAxis,
    units: impl Into<String>,
) -> Result<SpectralCube> {
    if table.nrows() != axis.len() || table.ncols() != width * height {
        return Err(Error::Shape(format!(
            "table {}x{} does not fit a {width}x{height}x{} cube",
            table.nrows(),
            table.ncols(),
            axis.len()
        )));
    }
    SpectralCube::new(width, height, axis, table.as_slice().to_vec(), units)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(n: usize) -> WavelengthAxis {
        WavelengthAxis::uniform(400.0, 400.0 + 10.0 * (n - 1) as f64, n).unwrap()
    }

    #[test]
    fn axis_rejects_bad_samples() {
        assert!(WavelengthAxis::new(vec![500.0]).is_err());
        assert!(WavelengthAxis::new(vec![500.0, 500.0]).is_err());
        assert!(WavelengthAxis::new(vec![500.0, 400.0]).is_err());
        assert!(WavelengthAxis::new(vec![0.0, 400.0]).is_err());
        assert!(WavelengthAxis::new(vec![400.0, f64::NAN]).is_err());
        assert!(WavelengthAxis::new(vec![400.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn constructors_reject_nan_inf_negative() {
        let a = axis(3);
        for bad in [f64::NAN, f64::INFINITY, -0.5] {
            let err = Spectrum::new(a.clone(), vec![0.1, bad, 0.2]).unwrap_err();
            assert!(err.to_string().contains("index 1"), "{err}");
            assert!(SpectralCube::new(1, 1, a.clone(), vec![0.1, bad, 0.2], "r").is_err());
            assert!(EndmemberSet::new(a.clone(), vec![vec![0.1, bad, 0.2]]).is_err());
            assert!(AbundanceField::new(1, 1, 2, vec![bad, 0.5], false).is_err());
        }
    }

    #[test]
    fn abundance_sum_to_one_checked() {
        assert!(AbundanceField::new(1, 1, 2, vec![0.3, 0.3], true).is_err());
        assert!(AbundanceField::new(1, 1, 2, vec![0.3, 0.7 + 5e-7], true).is_ok());
        assert!(AbundanceField::new(1, 1, 2, vec![0.3, 0.3], false).is_ok());
    }

    #[test]
    fn endmember_count_bounded_by_bands() {
        let a = axis(2);
        assert!(EndmemberSet::new(a.clone(), vec![]).is_err());
        assert!(EndmemberSet::new(a, vec![vec![1.0, 1.0]; 3]).is_err());
    }

    #[test]
    fn mix_identity_and_mean() {
        let e = EndmemberSet::new(axis(3), vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.0, 0.9]]).unwrap();
        assert_eq!(mix(&e, &[1.0, 0.0]).unwrap().values(), &[0.1, 0.2, 0.3]);
        let m = mix(&e, &[0.5, 0.5]).unwrap();
        for (b, v) in m.values().iter().enumerate() {
            assert_eq!(*v, 0.5 * e.signature(0)[b] + 0.5 * e.signature(1)[b]);
        }
    }

    #[test]
    fn mix_three_matches_per_band_products() {
        let sigs = vec![vec![0.11, 0.52, 0.93, 0.04], vec![0.7, 0.31, 0.2, 0.66], vec![0.05, 0.9, 0.47, 0.38]];
        let e = EndmemberSet::new(axis(4), sigs.clone()).unwrap();
        let f = [0.2, 0.3, 0.5];
        let m = mix(&e, &f).unwrap();
        for b in 0..4 {
            let expected = 0.2 * sigs[0][b] + 0.3 * sigs[1][b] + 0.5 * sigs[2][b];
            assert!((m.values()[b] - expected).abs() <= 1e-15);
        }
    }

    #[test]
    fn mix_errors() {
        let e = EndmemberSet::new(axis(3), vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.0, 0.9]]).unwrap();
        assert!(matches!(mix(&e, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(mix(&e, &[1.0, -0.1]), Err(Error::InvalidValue { .. })));
    }

    #[test]
    fn flatten_orders_pixels_row_major() {
        let one = SpectralCube::new(1, 1, axis(3), vec![1.0, 2.0, 3.0], "r").unwrap();
        let t = flatten(&one);
        assert_eq!((t.nrows(), t.ncols()), (3, 1));
        assert_eq!(t.column(0).as_slice(), &[1.0, 2.0, 3.0]);

        // 2x2, pixel (row, col) has value 10*row + col in band 0
        let data = vec![0.0, 0.5, 1.0, 0.5, 10.0, 0.5, 11.0, 0.5];
        let cube = SpectralCube::new(2, 2, axis(2), data, "r").unwrap();
        let t = flatten(&cube);
        assert_eq!(t.ncols(), 4);
        let band0: Vec<f64> = t.row(0).iter().copied().collect();
        assert_eq!(band0, vec![0.0, 1.0, 10.0, 11.0]);
        assert_eq!(cube.pixel_at(1, 0), &[10.0, 0.5]);
    }

    #[test]
    fn abundance_permutation_moves_columns() {
        let f = AbundanceField::new(1, 2, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0], true).unwrap();
        let g = f.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(g.pixel(0), &[0.3, 0.5, 0.2]);
        assert_eq!(g.pixel(1), &[0.0, 0.0, 1.0]);
    }
}
