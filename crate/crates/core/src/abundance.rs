//! Per-pixel abundance estimation under the linear mixing model.
//!
//! With both constraints on, each pixel is solved as fully constrained least
//! squares: nonnegative least squares on the system augmented with the row
//! `δ (1, …, 1) = δ`. Endmember columns are scaled to unit norm inside the
//! solver and fractions are mapped back afterwards.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{AbundanceField, EndmemberSet, SpectralCube};

/// Relative tolerance used when comparing cube and endmember axes.
pub const AXIS_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbundanceConfig {
    pub sum_to_one: bool,
    pub nonnegative: bool,
    /// Weight δ of the sum-to-one row, relative to the largest endmember norm.
    pub sto_weight: f64,
}

impl Default for AbundanceConfig {
    fn default() -> Self {
        AbundanceConfig {
            sum_to_one: true,
            nonnegative: true,
            sto_weight: 1e3,
        }
    }
}

impl AbundanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sto_weight > 0.0) || !self.sto_weight.is_finite() {
            return Err(Error::Config(format!(
                "sum-to-one weight must be finite and > 0, got {}",
                self.sto_weight
            )));
        }
        Ok(())
    }
}


/// Least squares on the columns listed in `cols`, via SVD.
fn lstsq_cols(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> Result<DVector<f64>> {
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    let eps = svd.singular_values.max() * 1e-14 * a.nrows().max(cols.len()) as f64;
    svd.solve(b, eps).map_err(|e| Error::Numerical(e.to_string()))
}

/// Nonnegative least squares `min ||A x - b||, x >= 0` by the Lawson-Hanson
/// active-set method, with at most `3 n` outer iterations.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::Shape(format!("rhs has {} rows, matrix has {m}", b.len())));
    }
    if n == 0 {
        return Err(Error::Shape("no columns".into()));
    }
    let col_scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    // dual feasibility at rounding level: gradients are O(|A| |b|)
    let tol = 10.0 * m.max(n) as f64 * f64::EPSILON * (col_scale * b.norm()).max(f64::MIN_POSITIVE);

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..3 * n {
        let w = a.transpose() * (b - a * &x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, v)| w[j] > v) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        passive[t] = true;

        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let s_p = lstsq_cols(a, b, &cols)?;
            let mut s = DVector::zeros(n);
            for (i, &j) in cols.iter().enumerate() {
                s[j] = s_p[i];
            }
            if cols.iter().all(|&j| s[j] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &cols {
                if s[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - s[j]));
                }
            }
            x += (&s - &x) * alpha;
            for &j in &cols {
                if x[j] <= 0.0 || (s[j] <= 0.0 && x[j] <= tol) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Equality-constrained least squares `min ||A g - b||` s.t. `c·g = 1`
/// restricted to `cols`, via the KKT system. Returns `(g on cols, μ)`.
fn equality_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, c: &[f64], cols: &[usize]) -> Option<(DVector<f64>, f64)> {
    let k = cols.len();
    let sub = a.select_columns(cols);
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    kkt.view_mut((0, 0), (k, k)).copy_from(&(sub.transpose() * &sub));
    for (i, &j) in cols.iter().enumerate() {
        kkt[(i, k)] = c[j];
        kkt[(k, i)] = c[j];
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs.rows_mut(0, k).copy_from(&(sub.transpose() * b));
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, k).into_owned(), sol[k]))
}

/// Endmembers prepared for repeated per-pixel solves.
#[derive(Debug, Clone)]
pub struct PixelSolver {
    config: AbundanceConfig,
    /// Unit-norm columns.
    basis: DMatrix<f64>,
    norms: Vec<f64>,
    /// Basis with the weighted sum-to-one row appended.
    augmented: DMatrix<f64>,
    delta: f64,
}

impl PixelSolver {
    /// `endmembers` is bands x p.
    pub fn new(endmembers: &DMatrix<f64>, config: AbundanceConfig) -> Result<Self> {
        config.validate()?;
        let (bands, p) = endmembers.shape();
        if p == 0 {
            return Err(Error::Shape("no endmembers".into()));
        }
        if p > bands {
            return Err(Error::Shape(format!("{p} endmembers exceed the {bands} bands")));
        }
        if endmembers.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("endmember table contains non-finite values".into()));
        }
        let norms: Vec<f64> = endmembers.column_iter().map(|c| c.norm()).collect();
        if let Some(k) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Numerical(format!("endmember {k} is all zero")));
        }
        let mut basis = endmembers.clone();
        for (mut col, n) in basis.column_iter_mut().zip(&norms) {
            col /= *n;
        }
        let n_max = norms.iter().copied().fold(0.0, f64::max);
        let delta = config.sto_weight * n_max;
        let mut augmented = basis.clone().insert_row(bands, 0.0);
        for k in 0..p {
            augmented[(bands, k)] = delta / norms[k];
        }
        Ok(PixelSolver {
            config,
            basis,
            norms,
            augmented,
            delta,
        })
    }

    pub fn endmember_count(&self) -> usize {
        self.norms.len()
    }

    pub fn solve(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        let (bands, p) = self.basis.shape();
        if spectrum.len() != bands {
            return Err(Error::Shape(format!("spectrum has {} bands, endmembers have {bands}", spectrum.len())));
        }
        let x = DVector::from_column_slice(spectrum);
        // constraint coefficients on the unit-norm coordinates g = f * norm
        let c: Vec<f64> = self.norms.iter().map(|n| 1.0 / n).collect();

        let g = match (self.config.nonnegative, self.config.sum_to_one) {
            (true, true) => {
                let b = DVector::from_iterator(bands + 1, spectrum.iter().copied().chain([self.delta]));
                let soft = nnls(&self.augmented, &b)?;
                self.polish(&x, &c, &soft).unwrap_or(soft)
            }
            (true, false) => nnls(&self.basis, &x)?,
            (false, true) => {
                let all: Vec<usize> = (0..p).collect();
                equality_lstsq(&self.basis, &x, &c, &all)
                    .map(|(g, _)| g)
                    .ok_or_else(|| Error::Numerical("sum-to-one system is singular".into()))?
            }
            (false, false) => self.unconstrained(&x)?,
        };

        let mut f: Vec<f64> = g.iter().zip(&self.norms).map(|(g, n)| g / n).collect();
        if self.config.nonnegative {
            f.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if self.config.sum_to_one && self.config.nonnegative {
            let s: f64 = f.iter().sum();
            if s > 1e-6 {
                f.iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok(f)
    }

    /// Re-solve the soft solution's support with the sum-to-one constraint
    /// held exactly. Accepted only if the result is strictly positive on the
    /// support and satisfies the optimality conditions off it.
    fn polish(&self, x: &DVector<f64>, c: &[f64], soft: &DVector<f64>) -> Option<DVector<f64>> {
        let p = soft.len();
        let support: Vec<usize> = (0..p).filter(|&k| soft[k] > 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let (g_s, mu) = equality_lstsq(&self.basis, x, c, &support)?;
        if g_s.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let mut g = DVector::zeros(p);
        for (i, &k) in support.iter().enumerate() {
            g[k] = g_s[i];
        }
        let r = x - &self.basis * &g;
        let scale = x.norm().max(1.0);
        for k in (0..p).filter(|k| !support.contains(k)) {
            // multiplier of g_k >= 0 must be nonnegative
            if mu * c[k] - self.basis.column(k).dot(&r) < -1e-9 * scale * c[k].max(1.0) {
                return None;
            }
        }
        Some(g)
    }

    fn unconstrained(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let gram = self.basis.transpose() * &self.basis;
        let rhs = self.basis.transpose() * x;
        if let Some(ch) = gram.clone().cholesky() {
            let g = ch.solve(&rhs);
            if g.iter().all(|v| v.is_finite()) {
                return Ok(g);
            }
        }
        let pinv = self
            .basis
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("rank-deficient endmember table: {e}")))?;
        let g = pinv * x;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("rank-deficient endmember table".into()));
        }
        Ok(g)
    }
}

/// Fractions for one pixel; `endmembers` is bands x p.
pub fn solve_pixel(spectrum: &[f64], endmembers: &DMatrix<f64>, config: &AbundanceConfig) -> Result<Vec<f64>> {
    PixelSolver::new(endmembers, *config)?.solve(spectrum)
}

/// Solve every pixel of `cube`.
pub fn solve_cube(cube: &SpectralCube, endmembers: &EndmemberSet, config: &AbundanceConfig) -> Result<AbundanceField> {
    if !cube.axis().approx_eq(endmembers.axis(), AXIS_MATCH_TOL) {
        return Err(Error::Shape(format!(
            "cube axis ({} bands) does not match endmember axis ({} bands)",
            cube.bands(),
            endmembers.axis().len()
        )));
    }
    let solver = PixelSolver::new(&endmembers.to_matrix(), *config)?;
    let rows: Vec<Vec<f64>> = cube
        .data()
        .par_chunks_exact(cube.bands())
        .map(|px| solver.solve(px))
        .collect::<Result<_>>()?;
    let p = endmembers.len();
    let fractions: Vec<f64> = rows.into_iter().flatten().collect();
    AbundanceField::new(cube.width(), cube.height(), p, fractions, config.sum_to_one && config.nonnegative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WavelengthAxis;

    fn endmembers() -> DMatrix<f64> {
        DMatrix::from_column_slice(
            5,
            3,
            &[
                0.9, 0.7, 0.3, 0.1, 0.2, //
                0.1, 0.3, 0.8, 0.6, 0.2, //
                0.2, 0.1, 0.1, 0.5, 0.9,
            ],
        )
    }

    #[test]
    fn pure_pixel_gives_unit_vector() {
        let e = endmembers();
        for k in 0..3 {
            let f = solve_pixel(e.column(k).as_slice(), &e, &AbundanceConfig::default()).unwrap();
            for (j, v) in f.iter().enumerate() {
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-8, "{f:?}");
            }
        }
    }

    #[test]
    fn two_endmember_mixture() {
        let e = endmembers().columns(0, 2).into_owned();
        let x = e.column(0) * 0.25 + e.column(1) * 0.75;
        for cfg in [
            AbundanceConfig::default(),
            AbundanceConfig { sum_to_one: false, ..Default::default() },
            AbundanceConfig { nonnegative: false, ..Default::default() },
            AbundanceConfig { nonnegative: false, sum_to_one: false, ..Default::default() },
        ] {
            let f = solve_pixel(x.as_slice(), &e, &cfg).unwrap();
            assert!((f[0] - 0.25).abs() < 1e-6 && (f[1] - 0.75).abs() < 1e-6, "{cfg:?} {f:?}");
        }
    }

    /// Outside the cone: compare with a dense grid over the segment f = (t, 1-t).
    #[test]
    fn outside_cone_matches_grid_search() {
        let e = endmembers().columns(0, 2).into_owned();
        let x = DVector::from_column_slice(&[0.05, 0.9, 0.2, 0.7, 0.1]);
        let f = solve_pixel(x.as_slice(), &e, &AbundanceConfig::default()).unwrap();
        assert!(f.iter().all(|&v| v >= 0.0));
        let resid = |t: f64| (&x - (e.column(0) * t + e.column(1) * (1.0 - t))).norm();
        let (mut best_t, mut best_r) = (0.0, f64::INFINITY);
        for i in 0..=100_000 {
            let t = i as f64 / 100_000.0;
            let r = resid(t);
            if r < best_r {
                best_r = r;
                best_t = t;
            }
        }
        assert!((f[0] - best_t).abs() < 1e-4, "{f:?} vs {best_t}");
        assert!((resid(f[0]) - best_r).abs() < 1e-4);
    }

    #[test]
    fn nnls_clamps_negative_direction() {
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[2.0, -3.0]);
        let x = nnls(&a, &b).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn scaling_endmembers_and_pixel_leaves_fractions() {
        let e = endmembers();
        let x = e.column(0) * 0.2 + e.column(1) * 0.5 + e.column(2) * 0.3 + DVector::from_element(5, 0.01);
        let f = solve_pixel(x.as_slice(), &e, &AbundanceConfig::default()).unwrap();
        let g = solve_pixel((x * 250.0).as_slice(), &(e.clone() * 250.0), &AbundanceConfig::default()).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() < 1e-9);
        }
        // scaling a single column rescales only its fraction's meaning, not the mix
        let mut e2 = e.clone();
        e2.column_mut(1).scale_mut(3.0);
        let x2 = e2.column(0) * 0.3 + e2.column(1) * 0.3 + e2.column(2) * 0.4;
        let h = solve_pixel(x2.as_slice(), &e2, &AbundanceConfig::default()).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-9 && (h[1] - 0.3).abs() < 1e-9 && (h[2] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn permuting_columns_permutes_fractions() {
        let e = endmembers();
        let x = DVector::from_column_slice(&[0.4, 0.5, 0.3, 0.35, 0.5]);
        let f = solve_pixel(x.as_slice(), &e, &AbundanceConfig::default()).unwrap();
        let perm = [2, 0, 1];
        let ep = DMatrix::from_fn(5, 3, |b, k| e[(b, perm[k])]);
        let g = solve_pixel(x.as_slice(), &ep, &AbundanceConfig::default()).unwrap();
        for k in 0..3 {
            assert!((g[k] - f[perm[k]]).abs() < 1e-10);
        }
    }

    /// Strongly correlated, large-valued columns (a simulated 9-channel
    /// camera): every column must still enter the active set.
    #[test]
    fn correlated_large_endmembers_recover_planted_fractions() {
        let e = DMatrix::from_row_slice(
            9,
            4,
            &[
                7.14, 30.8, 7.51, 24.49, 8.17, 32.4, 8.44, 25.64, 8.84, 30.98, 8.75, 24.54, 9.43, 28.43, 8.79,
                22.67, 9.9, 25.17, 8.62, 20.33, 101.61, 226.62, 84.11, 186.85, 10.12, 21.43, 8.22, 17.64, 9.92,
                17.4, 7.55, 14.68, 9.25, 13.43, 6.68, 11.68,
            ],
        );
        for f in [[0.0727, 0.0662, 0.0011, 0.86], [0.25, 0.25, 0.25, 0.25], [0.0, 0.5, 0.0, 0.5]] {
            let x = &e * DVector::from_column_slice(&f);
            let got = solve_pixel(x.as_slice(), &e, &AbundanceConfig::default()).unwrap();
            for k in 0..4 {
                assert!((got[k] - f[k]).abs() < 1e-8, "{got:?} vs {f:?}");
            }
        }
    }

    #[test]
    fn errors() {
        let e = endmembers();
        assert!(matches!(solve_pixel(&[0.1; 4], &e, &AbundanceConfig::default()), Err(Error::Shape(_))));
        let wide = DMatrix::from_element(2, 3, 0.5);
        assert!(matches!(solve_pixel(&[0.1; 2], &wide, &AbundanceConfig::default()), Err(Error::Shape(_))));
        let bad = AbundanceConfig { sto_weight: 0.0, ..Default::default() };
        assert!(solve_pixel(&[0.1; 5], &e, &bad).is_err());
        // two identical columns: the unconstrained path falls back to the pseudo-inverse
        let dup = DMatrix::from_fn(5, 2, |b, _| e[(b, 0)]);
        let free = AbundanceConfig { nonnegative: false, sum_to_one: false, ..Default::default() };
        let f = solve_pixel(e.column(0).as_slice(), &dup, &free).unwrap();
        assert!((f[0] + f[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solve_cube_pure_pixels_and_axis_check() {
        let e = endmembers();
        let axis = WavelengthAxis::uniform(400.0, 800.0, 5).unwrap();
        let set = EndmemberSet::from_columns(axis.clone(), &e).unwrap();
        let data: Vec<f64> = (0..6).flat_map(|j| e.column(j % 3).iter().copied().collect::<Vec<_>>()).collect();
        let cube = SpectralCube::new(3, 2, axis, data, "r").unwrap();
        let field = solve_cube(&cube, &set, &AbundanceConfig::default()).unwrap();
        assert!(field.sum_to_one());
        for (j, row) in field.rows().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((v - if k == j % 3 { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        let other = WavelengthAxis::uniform(400.0, 900.0, 5).unwrap();
        let set2 = EndmemberSet::from_columns(other, &e).unwrap();
        assert!(matches!(solve_cube(&cube, &set2, &AbundanceConfig::default()), Err(Error::Shape(_))));
    }
}
