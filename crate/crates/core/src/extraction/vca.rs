use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::subspace::leading_directions;
use super::{all_columns_identical, check_table, pick_columns, seeded_rng, ExtractionConfig, ExtractionResult, Method};
use crate::error::{Error, Result};
use crate::spectral::{EndmemberSet, WavelengthAxis};

/// Redraws allowed when a random direction falls inside the current span.
const MAX_DIRECTION_DRAWS: usize = 64;

/// Vertex component analysis, projective form.
///
/// The data is projected onto its leading `p` directions (uncentered second
/// moment), then each projected pixel is scaled onto the hyperplane
/// `<x, mean> = 1`. Each of the `p` steps draws a Gaussian direction,
/// removes its component in the span of the endmembers found so far, and
/// keeps the pixel with the largest absolute projection on it.
pub fn vca(data: &DMatrix<f64>, axis: &WavelengthAxis, config: &ExtractionConfig) -> Result<ExtractionResult> {
    config.validate()?;
    let p = config.p;
    check_table(data, p)?;
    if data.nrows() != axis.len() {
        return Err(Error::Shape(format!("{} bands in data, {} on axis", data.nrows(), axis.len())));
    }
    if all_columns_identical(data) {
        return Err(Error::Degenerate("all pixels are identical".into()));
    }
    let n = data.ncols();

    let scatter = (data * data.transpose()) / n as f64;
    let (basis, _, _) = leading_directions(scatter, p);
    let x = basis.transpose() * data;
    let u = x.column_mean();

    // projective scaling; pixels with no component along the mean direction
    // cannot be placed on the hyperplane and are never selected
    let mut y = DMatrix::zeros(p, n);
    let mut valid = vec![false; n];
    let scale = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max) * u.norm();
    for j in 0..n {
        let d = x.column(j).dot(&u);
        if d > scale * 1e-12 {
            y.set_column(j, &(x.column(j) / d));
            valid[j] = true;
        }
    }

    let mut rng = seeded_rng(config.seed);
    let mut selected: Vec<usize> = Vec::with_capacity(p);
    let mut span: Vec<DVector<f64>> = Vec::with_capacity(p);

    for step in 0..p {
        let anchors: Vec<DVector<f64>> = if step == 0 {
            let mut e = DVector::zeros(p);
            e[p - 1] = 1.0;
            vec![e]
        } else {
            selected.iter().map(|&j| y.column(j).into_owned()).collect()
        };
        orthonormalize(&anchors, &mut span);

        let mut direction = None;
        for _ in 0..MAX_DIRECTION_DRAWS {
            let w = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let mut f = w.clone();
            for q in &span {
                f -= q * q.dot(&w);
            }
            let norm = f.norm();
            if norm > 1e-10 * w.norm() {
                direction = Some(f / norm);
                break;
            }
        }
        let f = direction.ok_or_else(|| Error::Numerical("no direction orthogonal to the endmember span".into()))?;

        let proj = f.transpose() * &y;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !valid[j] || selected.contains(&j) {
                continue;
            }
            let v = proj[j].abs();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let (j, _) = best.ok_or_else(|| Error::Degenerate("no pixel left to select".into()))?;
        selected.push(j);
    }

    let endmembers = EndmemberSet::from_columns(axis.clone(), &pick_columns(data, &selected))?
        .with_pixel_indices(selected.clone())?;
    Ok(ExtractionResult {
        endmembers,
        method: Method::Vca,
        pixel_indices: Some(selected),
        objective_trace: Vec::new(),
        iterations: p,
        abundances: None,
    })
}

/// Modified Gram-Schmidt; near-dependent vectors are dropped.
fn orthonormalize(vectors: &[DVector<f64>], out: &mut Vec<DVector<f64>>) {
    out.clear();
    for v in vectors {
        let mut r = v.clone();
        for q in out.iter() {
            let c = q.dot(&r);
            r -= q * c;
        }
        let n = r.norm();
        if n > 1e-12 * v.norm().max(f64::MIN_POSITIVE) {
            out.push(r / n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Noiseless mixtures of `p` random signatures; pixels `0..p` are pure.
    fn pure_pixel_scene(bands: usize, n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = seeded_rng(seed);
        let e = DMatrix::from_fn(bands, p, |_, _| 0.05 + rng.random::<f64>());
        let mut a = DMatrix::zeros(p, n);
        for j in 0..n {
            if j < p {
                a[(j, j)] = 1.0;
            } else {
                let w: Vec<f64> = (0..p).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = w.iter().sum();
                for k in 0..p {
                    a[(k, j)] = w[k] / s;
                }
            }
        }
        (e.clone() * a, e)
    }

    fn axis(n: usize) -> WavelengthAxis {
        WavelengthAxis::uniform(400.0, 1000.0, n).unwrap()
    }

    #[test]
    fn finds_pure_pixels() {
        for seed in 0..5 {
            let (d, _) = pure_pixel_scene(8, 200, 3, 100 + seed);
            let r = vca(&d, &axis(8), &ExtractionConfig::new(3, seed)).unwrap();
            let mut ix = r.pixel_indices.unwrap();
            ix.sort();
            assert_eq!(ix, vec![0, 1, 2], "seed {seed}");
        }
    }

    #[test]
    fn repeated_vertices_pick_one_copy_each() {
        let v = [[0.9, 0.1, 0.2, 0.4], [0.1, 0.8, 0.3, 0.2], [0.2, 0.3, 0.9, 0.6]];
        let n = 12;
        let d = DMatrix::from_fn(4, n, |b, j| v[j % 3][b]);
        let r = vca(&d, &axis(4), &ExtractionConfig::new(3, 9)).unwrap();
        let mut classes: Vec<usize> = r.pixel_indices.unwrap().iter().map(|j| j % 3).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_for_same_seed() {
        let (d, _) = pure_pixel_scene(6, 150, 4, 5);
        let a = vca(&d, &axis(6), &ExtractionConfig::new(4, 42)).unwrap();
        let b = vca(&d, &axis(6), &ExtractionConfig::new(4, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn endmembers_are_input_columns() {
        let (d, _) = pure_pixel_scene(6, 150, 4, 6);
        let r = vca(&d, &axis(6), &ExtractionConfig::new(4, 1)).unwrap();
        for (k, &j) in r.pixel_indices.as_ref().unwrap().iter().enumerate() {
            assert_eq!(r.endmembers.signature(k), d.column(j).as_slice());
        }
    }

    #[test]
    fn errors() {
        let d = DMatrix::from_element(4, 2, 0.5);
        assert!(matches!(vca(&d, &axis(4), &ExtractionConfig::new(3, 0)), Err(Error::Shape(_))));
        let same = DMatrix::from_element(4, 10, 0.5);
        assert!(matches!(vca(&same, &axis(4), &ExtractionConfig::new(3, 0)), Err(Error::Degenerate(_))));
    }
}
