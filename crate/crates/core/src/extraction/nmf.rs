use nalgebra::DMatrix;
use rand::Rng;

use super::{seeded_rng, ExtractionConfig, ExtractionResult, Method};
use crate::error::{Error, Result};
use crate::spectral::{EndmemberSet, WavelengthAxis};

/// Floor applied to multiplicative-update denominators.
pub const NMF_EPSILON: f64 = 1e-12;

fn frobenius_error(v: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let mut r = w * h;
    r -= v;
    r.norm()
}

fn check_nmf_input(data: &DMatrix<f64>, p: usize) -> Result<()> {
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidValue {
            what: "nmf input",
            index: i,
            value: *v,
        });
    }
    let (bands, n) = data.shape();
    if p > bands.min(n) {
        return Err(Error::Shape(format!(
            "{p} endmembers exceed min(bands, pixels) = {}",
            bands.min(n)
        )));
    }
    Ok(())
}

/// Nonnegative matrix factorization `data ≈ W H` by Lee-Seung multiplicative
/// updates on the Frobenius error.
///
/// `W` (bands x p) and `H` (p x pixels) start from seeded uniform entries in
/// `(0, s]`, with `s = 2 sqrt(mean / p)` so that `W H` starts near the data's
/// mean magnitude. Columns of `W` become the endmembers, sorted by
/// descending norm.
pub fn nmf(data: &DMatrix<f64>, axis: &WavelengthAxis, config: &ExtractionConfig) -> Result<ExtractionResult> {
    config.validate()?;
    check_nmf_input(data, config.p)?;
    let (bands, n) = data.shape();
    let p = config.p;
    let mean = data.mean();
    if mean == 0.0 {
        return Err(Error::Degenerate("all data values are zero".into()));
    }
    let scale = 2.0 * (mean / p as f64).sqrt();
    let mut rng = seeded_rng(config.seed);
    // random() is in [0, 1); 1 - x keeps every entry strictly positive
    let w = DMatrix::from_fn(bands, p, |_, _| scale * (1.0 - rng.random::<f64>()));
    let h = DMatrix::from_fn(p, n, |_, _| scale * (1.0 - rng.random::<f64>()));
    nmf_with_init(data, axis, w, h, config)
}

/// [`nmf`] from caller-supplied starting factors.
///
/// An update that would raise the objective (only possible through rounding
/// or the denominator floor) is discarded and iteration stops, so the trace
/// never increases.
pub fn nmf_with_init(
    data: &DMatrix<f64>,
    axis: &WavelengthAxis,
    mut w: DMatrix<f64>,
    mut h: DMatrix<f64>,
    config: &ExtractionConfig,
) -> Result<ExtractionResult> {
    config.validate()?;
    check_nmf_input(data, config.p)?;
    let (bands, n) = data.shape();
    let p = config.p;
    if w.shape() != (bands, p) || h.shape() != (p, n) {
        return Err(Error::Shape(format!(
            "initial factors {:?} and {:?} do not fit data {bands}x{n} with p={p}",
            w.shape(),
            h.shape()
        )));
    }
    if w.iter().chain(h.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("initial factors must be finite and nonnegative".into()));
    }
    if axis.len() != bands {
        return Err(Error::Shape(format!("{bands} bands in data, {} on axis", axis.len())));
    }

    let mut prev = frobenius_error(data, &w, &h);
    let mut trace = Vec::new();
    for _ in 0..config.max_iter {
        let (w_next, h_next) = multiplicative_step(data, &w, &h);
        let obj = frobenius_error(data, &w_next, &h_next);
        if obj > prev {
            break;
        }
        w = w_next;
        h = h_next;
        trace.push(obj);
        let decrease = if prev > 0.0 { (prev - obj) / prev } else { 0.0 };
        prev = obj;
        if decrease < config.tol {
            break;
        }
    }

    // descending column norm, ties by original position
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let w_sorted = DMatrix::from_fn(bands, p, |b, k| w[(b, order[k])]);
    let h_sorted = DMatrix::from_fn(p, n, |k, j| h[(order[k], j)]);

    Ok(ExtractionResult {
        endmembers: EndmemberSet::from_columns(axis.clone(), &w_sorted)?,
        method: Method::Nmf,
        pixel_indices: None,
        iterations: trace.len(),
        objective_trace: trace,
        abundances: Some(h_sorted),
    })
}

/// One H update followed by one W update.
pub(crate) fn multiplicative_step(v: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let wt = w.transpose();
    let numer = &wt * v;
    let denom = (&wt * w) * h;
    let h_next = h.zip_zip_map(&numer, &denom, |x, a, b| x * a / b.max(NMF_EPSILON));

    let ht = h_next.transpose();
    let numer = v * &ht;
    let denom = w * (&h_next * &ht);
    let w_next = w.zip_zip_map(&numer, &denom, |x, a, b| x * a / b.max(NMF_EPSILON));
    (w_next, h_next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(n: usize) -> WavelengthAxis {
        WavelengthAxis::uniform(400.0, 1000.0, n).unwrap()
    }

    fn planted(bands: usize, n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        let w = DMatrix::from_fn(bands, p, |_, _| 0.1 + rng.random::<f64>());
        let h = DMatrix::from_fn(p, n, |_, _| 0.1 + rng.random::<f64>());
        w * h
    }

    #[test]
    fn rank_one_is_recovered() {
        let u = DMatrix::from_fn(6, 1, |b, _| 0.2 + 0.1 * b as f64);
        let v = DMatrix::from_fn(1, 40, |_, j| 0.5 + (j as f64 * 0.3).sin().abs());
        let d = &u * &v;
        let r = nmf(&d, &axis(6), &ExtractionConfig::new(1, 4).with_max_iter(500).with_tol(1e-15)).unwrap();
        let w = r.endmembers.to_matrix();
        let h = r.abundances.unwrap();
        let rmse = ((&w * &h) - &d).norm() / (d.len() as f64).sqrt();
        assert!(rmse < 1e-8 * d.mean(), "{rmse}");
    }

    #[test]
    fn trace_never_increases_and_factors_stay_nonnegative() {
        let d = planted(8, 60, 3, 9);
        let r = nmf(&d, &axis(8), &ExtractionConfig::new(3, 1).with_max_iter(300).with_tol(1e-14)).unwrap();
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.iterations, r.objective_trace.len());
        assert!(r.abundances.unwrap().iter().all(|&v| v >= 0.0));
        let norms: Vec<f64> = r.endmembers.signatures().iter().map(|s| s.iter().map(|x| x * x).sum::<f64>()).collect();
        assert!(norms.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn single_iteration_gives_single_trace_entry() {
        let d = planted(5, 30, 2, 2);
        let r = nmf(&d, &axis(5), &ExtractionConfig::new(2, 1).with_max_iter(1)).unwrap();
        assert_eq!(r.objective_trace.len(), 1);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn zero_entries_are_fixed_points() {
        let d = planted(5, 20, 2, 3);
        let mut w = DMatrix::from_element(5, 2, 0.7);
        let mut h = DMatrix::from_element(2, 20, 0.4);
        w[(1, 0)] = 0.0;
        h[(1, 7)] = 0.0;
        let (w2, h2) = multiplicative_step(&d, &w, &h);
        assert_eq!(w2[(1, 0)], 0.0);
        assert_eq!(h2[(1, 7)], 0.0);
        assert!(w2.iter().chain(h2.iter()).all(|&v| v >= 0.0));
    }

    #[test]
    fn deterministic() {
        let d = planted(6, 40, 3, 4);
        let cfg = ExtractionConfig::new(3, 99).with_max_iter(50);
        assert_eq!(nmf(&d, &axis(6), &cfg).unwrap(), nmf(&d, &axis(6), &cfg).unwrap());
    }

    #[test]
    fn errors() {
        let mut d = planted(4, 10, 2, 5);
        assert!(matches!(nmf(&d, &axis(4), &ExtractionConfig::new(5, 0)), Err(Error::Shape(_))));
        d[(0, 0)] = -1.0;
        assert!(matches!(nmf(&d, &axis(4), &ExtractionConfig::new(2, 0)), Err(Error::InvalidValue { .. })));
        let z = DMatrix::zeros(4, 10);
        assert!(matches!(nmf(&z, &axis(4), &ExtractionConfig::new(2, 0)), Err(Error::Degenerate(_))));
    }
}
