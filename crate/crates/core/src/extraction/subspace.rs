use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean-centered data expressed in its leading principal directions.
#[derive(Debug, Clone)]
pub struct Subspace {
    /// dim x pixels coordinates.
    pub projected: DMatrix<f64>,
    /// bands x dim orthonormal basis, leading direction first.
    pub basis: DMatrix<f64>,
    /// Per-band mean removed before projection.
    pub mean: DVector<f64>,
    /// Singular values of the centered data for the kept directions.
    pub singular_values: Vec<f64>,
    /// `dim` exceeded the numerical rank; trailing coordinates are ~0.
    pub rank_deficient: bool,
}

impl Subspace {
    /// Back-projection `basis * projected + mean`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = &self.basis * &self.projected;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

/// Leading `dim` eigenvectors of a symmetric PSD matrix, largest first, with
/// each vector's largest-magnitude entry made positive. Also returns the
/// matching eigenvalues and the numerical rank.
pub(crate) fn leading_directions(scatter: DMatrix<f64>, dim: usize) -> (DMatrix<f64>, Vec<f64>, usize) {
    let n = scatter.nrows();
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > top * 1e-12 && eig.eigenvalues[i] > 0.0)
        .count();

    let mut basis = DMatrix::zeros(n, dim);
    let mut values = Vec::with_capacity(dim);
    for (k, &i) in order.iter().take(dim).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let mut lead = 0;
        for r in 1..n {
            if v[r].abs() > v[lead].abs() {
                lead = r;
            }
        }
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
        values.push(eig.eigenvalues[i].max(0.0));
    }
    (basis, values, rank)
}

/// Project mean-centered `data` (bands x pixels) onto its top `dim`
/// principal directions.
pub fn project_subspace(data: &DMatrix<f64>, dim: usize) -> Result<Subspace> {
    let (bands, n) = data.shape();
    if dim == 0 || dim > bands {
        return Err(Error::Config(format!("subspace dimension {dim} must be in 1..={bands}")));
    }
    if n == 0 {
        return Err(Error::Shape("no pixels to project".into()));
    }
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let scatter = &centered * centered.transpose();
    let (basis, eigenvalues, rank) = leading_directions(scatter, dim);
    let projected = basis.transpose() * &centered;
    Ok(Subspace {
        projected,
        basis,
        mean,
        singular_values: eigenvalues.iter().map(|v| v.sqrt()).collect(),
        rank_deficient: dim > rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::extraction::seeded_rng;

    fn random_table(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn full_dimension_is_a_change_of_basis() {
        let d = random_table(6, 40, 1);
        let s = project_subspace(&d, 6).unwrap();
        assert!((s.reconstruct() - &d).amax() < 1e-10);
        assert!((s.basis.transpose() * &s.basis - DMatrix::identity(6, 6)).amax() < 1e-12);
        assert!(!s.rank_deficient);
    }

    #[test]
    fn affine_plane_is_reproduced_exactly() {
        let mut rng = seeded_rng(2);
        let origin = DVector::from_fn(7, |_, _| rng.random::<f64>());
        let u = DVector::from_fn(7, |_, _| rng.random::<f64>() - 0.5);
        let v = DVector::from_fn(7, |_, _| rng.random::<f64>() - 0.5);
        let d = DMatrix::from_fn(7, 60, |r, c| {
            let (a, b) = ((c as f64 * 0.37).sin(), (c as f64 * 0.11).cos());
            origin[r] + a * u[r] + b * v[r]
        });
        let s = project_subspace(&d, 2).unwrap();
        assert!((s.reconstruct() - &d).amax() < 1e-10);
        let s3 = project_subspace(&d, 3).unwrap();
        assert!(s3.rank_deficient);
    }

    /// Tail energy from a full SVD of the centered data is the oracle.
    #[test]
    fn truncation_error_equals_tail_singular_energy() {
        let d = random_table(5, 50, 3);
        let s = project_subspace(&d, 3).unwrap();
        let err = (s.reconstruct() - &d).norm_squared();

        let mean = d.column_mean();
        let mut c = d.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let mut sv: Vec<f64> = c.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[3..].iter().map(|x| x * x).sum();
        assert!((err - tail).abs() <= 1e-10 * tail.max(1.0), "{err} vs {tail}");
        for (a, b) in s.singular_values.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let d = random_table(4, 30, 4);
        let s = project_subspace(&d, 4).unwrap();
        for col in s.basis.column_iter() {
            let lead = col.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn rejects_bad_dimension() {
        let d = random_table(4, 10, 5);
        assert!(project_subspace(&d, 0).is_err());
        assert!(project_subspace(&d, 5).is_err());
    }
}
