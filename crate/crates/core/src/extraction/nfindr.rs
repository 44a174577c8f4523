use nalgebra::DMatrix;
use rand::seq::index;

use super::subspace::project_subspace;
use super::{check_table, pick_columns, seeded_rng, ExtractionConfig, ExtractionResult, Method};
use crate::error::{Error, Result};
use crate::spectral::{EndmemberSet, WavelengthAxis};

/// |det| of the p x p matrix whose first row is ones and whose remaining
/// rows are the (p-1)-dimensional vertex coordinates. Proportional to the
/// simplex volume.
pub fn simplex_volume(points: &DMatrix<f64>, vertices: &[usize]) -> f64 {
    let p = vertices.len();
    debug_assert_eq!(points.nrows() + 1, p);
    let mut m = vec![0.0; p * p];
    for (c, &j) in vertices.iter().enumerate() {
        m[c] = 1.0;
        for r in 1..p {
            m[r * p + c] = points[(r - 1, j)];
        }
    }
    det_abs(&mut m, p)
}

/// Gaussian elimination with partial pivoting on a row-major square buffer.
fn det_abs(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        let pv = m[piv * n + col];
        if pv == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
        }
        det *= pv;
        for r in col + 1..n {
            let f = m[r * n + col] / pv;
            if f != 0.0 {
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
            }
        }
    }
    det.abs()
}

/// N-FINDR simplex volume maximization.
///
/// Data is reduced to `p - 1` principal dimensions. Starting from `p`
/// distinct seeded pixels, each sweep visits every vertex slot and scans
/// candidate pixels in ascending index, replacing the vertex whenever the
/// volume strictly grows. Sweeps stop when one makes no replacement or after
/// `max_iter` sweeps.
pub fn nfindr(data: &DMatrix<f64>, axis: &WavelengthAxis, config: &ExtractionConfig) -> Result<ExtractionResult> {
    config.validate()?;
    let p = config.p;
    if p < 2 {
        return Err(Error::Config("N-FINDR needs at least 2 endmembers".into()));
    }
    check_table(data, p)?;
    if data.nrows() != axis.len() {
        return Err(Error::Shape(format!("{} bands in data, {} on axis", data.nrows(), axis.len())));
    }
    let n = data.ncols();
    let points = project_subspace(data, p - 1)?.projected;

    let spread = points.amax();
    let zero_volume = 1e-12 * spread.powi(p as i32 - 1);
    let mut current = None;
    for attempt in 0..config.max_iter {
        let mut rng = seeded_rng(config.seed.wrapping_add(attempt as u64));
        let start = index::sample(&mut rng, n, p).into_vec();
        let vol = simplex_volume(&points, &start);
        if vol > zero_volume {
            current = Some((start, vol));
            break;
        }
    }
    let (mut vertices, mut volume) = current.ok_or_else(|| {
        Error::Degenerate(format!(
            "no initial simplex with nonzero volume after {} attempts",
            config.max_iter
        ))
    })?;

    let mut trace = vec![volume];
    let mut sweeps = 0;
    let mut trial = vertices.clone();
    while sweeps < config.max_iter {
        sweeps += 1;
        let mut replaced = false;
        for slot in 0..p {
            for cand in 0..n {
                if vertices.contains(&cand) {
                    continue;
                }
                trial.copy_from_slice(&vertices);
                trial[slot] = cand;
                let v = simplex_volume(&points, &trial);
                if v > volume {
                    vertices[slot] = cand;
                    volume = v;
                    replaced = true;
                }
            }
        }
        trace.push(volume);
        if !replaced {
            break;
        }
    }

    let endmembers = EndmemberSet::from_columns(axis.clone(), &pick_columns(data, &vertices))?
        .with_pixel_indices(vertices.clone())?;
    Ok(ExtractionResult {
        endmembers,
        method: Method::Nfindr,
        pixel_indices: Some(vertices),
        objective_trace: trace,
        iterations: sweeps,
        abundances: None,
    })
}
