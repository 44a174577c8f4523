//! Evaluation against ground truth.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spectral::{AbundanceField, EndmemberSet, Spectrum};

/// Largest `p` matched by trying every permutation.
pub const EXHAUSTIVE_MATCH_LIMIT: usize = 8;

/// Spectral angle between two band vectors, in radians.
///
/// Evaluated as `2 atan2(|â - b̂|, |â + b̂|)`, which equals the arc cosine of
/// the normalized dot product but keeps full precision near 0 and π.
pub fn spectral_angle_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("spectra of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical("spectral angle of a zero-norm spectrum".into()));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

pub fn spectral_angle(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    if a.axis() != b.axis() && !a.axis().approx_eq(b.axis(), 1e-6) {
        return Err(Error::Shape("spectra are on different axes".into()));
    }
    spectral_angle_values(a.values(), b.values())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `permutation[i]` is the ground-truth index matched to estimate `i`.
    pub permutation: Vec<usize>,
    /// SAD of each estimate against its match, indexed like the estimates.
    pub per_pair_sad: Vec<f64>,
    pub total_sad: f64,
}

/// Pair estimated and true endmembers so that the summed spectral angle is
/// minimal.
pub fn match_endmembers(estimated: &EndmemberSet, truth: &EndmemberSet) -> Result<MatchResult> {
    let p = estimated.len();
    if truth.len() != p {
        return Err(Error::Shape(format!("{p} estimated endmembers vs {} true ones", truth.len())));
    }
    if !estimated.axis().approx_eq(truth.axis(), 1e-6) {
        return Err(Error::Shape("estimated and true endmembers are on different axes".into()));
    }
    let mut cost = vec![vec![0.0; p]; p];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = spectral_angle_values(estimated.signature(i), truth.signature(j))?;
        }
    }
    let permutation = if p <= EXHAUSTIVE_MATCH_LIMIT {
        best_permutation(&cost)
    } else {
        hungarian(&cost)
    };
    let per_pair_sad: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).collect();
    Ok(MatchResult {
        total_sad: per_pair_sad.iter().sum(),
        permutation,
        per_pair_sad,
    })
}

/// Lexicographic enumeration; the first minimum wins.
fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Minimum-cost assignment (Kuhn-Munkres with potentials), O(n³).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // way/p use 1-based columns; p[j] is the row assigned to column j
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Sum of absolute abundance differences, in percent.
pub fn savd(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} estimated fractions vs {} true ones",
            estimated.len(),
            truth.len()
        )));
    }
    Ok(100.0 * estimated.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavdReport {
    pub names: Vec<String>,
    /// SAVD of every pixel or patch, percent.
    pub per_instance: Vec<f64>,
    /// Mean SAVD over the instances whose ground truth contains each
    /// endmember; `None` if no instance does.
    pub per_endmember_mean: Vec<Option<f64>>,
    /// Mean of the per-endmember means.
    pub overall_mean: f64,
    /// Sample standard deviation (n - 1) of the per-endmember means.
    pub overall_std: f64,
}

/// Table-style SAVD summary. Rows must already be aligned to `names`.
pub fn savd_report<E, T>(estimated: &[E], truth: &[T], names: &[String]) -> Result<SavdReport>
where
    E: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    if estimated.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} estimated instances vs {} true ones",
            estimated.len(),
            truth.len()
        )));
    }
    let p = names.len();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    let mut per_instance = Vec::with_capacity(estimated.len());
    for (i, (e, t)) in estimated.iter().zip(truth).enumerate() {
        let (e, t) = (e.as_ref(), t.as_ref());
        if e.len() != p || t.len() != p {
            return Err(Error::Shape(format!("instance {i} does not have {p} fractions")));
        }
        let s = savd(e, t)?;
        per_instance.push(s);
        for k in 0..p {
            if t[k] > 0.0 {
                sums[k] += s;
                counts[k] += 1;
            }
        }
    }
    let per_endmember_mean: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let present: Vec<f64> = per_endmember_mean.iter().flatten().copied().collect();
    let (overall_mean, overall_std) = mean_and_sample_std(&present);
    Ok(SavdReport {
        names: names.to_vec(),
        per_instance,
        per_endmember_mean,
        overall_mean,
        overall_std,
    })
}

/// [`savd_report`] for two abundance fields of the same shape.
pub fn savd_report_fields(estimated: &AbundanceField, truth: &AbundanceField, names: &[String]) -> Result<SavdReport> {
    if estimated.num_pixels() != truth.num_pixels() || estimated.endmember_count() != truth.endmember_count() {
        return Err(Error::Shape("abundance fields differ in shape".into()));
    }
    let e: Vec<&[f64]> = estimated.rows().collect();
    let t: Vec<&[f64]> = truth.rows().collect();
    savd_report(&e, &t, names)
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// RMS of `data - endmembers * abundances` over all entries.
pub fn reconstruction_rmse(data: &DMatrix<f64>, endmembers: &DMatrix<f64>, abundances: &DMatrix<f64>) -> Result<f64> {
    let (bands, n) = data.shape();
    if endmembers.nrows() != bands || abundances.ncols() != n || endmembers.ncols() != abundances.nrows() {
        return Err(Error::Shape(format!(
            "data {bands}x{n}, endmembers {}x{}, abundances {}x{}",
            endmembers.nrows(),
            endmembers.ncols(),
            abundances.nrows(),
            abundances.ncols()
        )));
    }
    let r = data - endmembers * abundances;
    Ok((r.norm_squared() / r.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::seeded_rng;
    use crate::spectral::WavelengthAxis;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn axis(n: usize) -> WavelengthAxis {
        WavelengthAxis::uniform(400.0, 1000.0, n).unwrap()
    }

    #[test]
    fn angle_basics() {
        let a = Spectrum::new(axis(3), vec![0.2, 0.5, 0.1]).unwrap();
        let b = Spectrum::new(axis(3), vec![0.4, 1.0, 0.2]).unwrap();
        assert_eq!(spectral_angle(&a, &a).unwrap(), 0.0);
        assert!(spectral_angle(&a, &b).unwrap() < 1e-7);
        let x = Spectrum::new(axis(3), vec![1.0, 0.0, 0.0]).unwrap();
        let y = Spectrum::new(axis(3), vec![0.0, 1.0, 0.0]).unwrap();
        assert!((spectral_angle(&x, &y).unwrap() - FRAC_PI_2).abs() < 1e-15);
        let z = Spectrum::new(axis(3), vec![0.0; 3]).unwrap();
        assert!(spectral_angle(&x, &z).is_err());
    }

    fn random_set(p: usize, bands: usize, seed: u64) -> EndmemberSet {
        let mut rng = seeded_rng(seed);
        let sigs = (0..p).map(|_| (0..bands).map(|_| rng.random::<f64>() + 0.01).collect()).collect();
        EndmemberSet::new(axis(bands), sigs).unwrap()
    }

    #[test]
    fn shuffled_truth_gives_inverse_shuffle() {
        let truth = random_set(5, 12, 1);
        let shuffle = [3, 0, 4, 1, 2];
        let est = truth.reordered(&shuffle).unwrap();
        let m = match_endmembers(&est, &truth).unwrap();
        // estimate i is truth shuffle[i]
        assert_eq!(m.permutation, shuffle.to_vec());
        assert!(m.total_sad < 1e-10);
        let same = match_endmembers(&truth, &truth).unwrap();
        assert_eq!(same.permutation, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn noisy_three_matches_brute_force() {
        for seed in 0..20 {
            let truth = random_set(3, 10, seed);
            let mut rng = seeded_rng(1000 + seed);
            let noisy: Vec<Vec<f64>> = [2, 0, 1]
                .iter()
                .map(|&k| truth.signature(k).iter().map(|v| v + 0.3 * rng.random::<f64>()).collect())
                .collect();
            let est = EndmemberSet::new(truth.axis().clone(), noisy).unwrap();
            let m = match_endmembers(&est, &truth).unwrap();
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let best = perms
                .iter()
                .map(|p| (0..3).map(|i| spectral_angle_values(est.signature(i), truth.signature(p[i])).unwrap()).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((m.total_sad - best).abs() < 1e-15, "seed {seed}");
        }
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let mut rng = seeded_rng(5);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
                let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
                let a = hungarian(&cost);
                let b = best_permutation(&cost);
                assert!((total(&a) - total(&b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_p_uses_assignment() {
        let truth = random_set(10, 16, 2);
        let order: Vec<usize> = (0..10).rev().collect();
        let est = truth.reordered(&order).unwrap();
        let m = match_endmembers(&est, &truth).unwrap();
        assert_eq!(m.permutation, order);
    }

    #[test]
    fn savd_values() {
        // a patch of pure carmine classified entirely as vermilion
        assert_eq!(savd(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 200.0);
        assert_eq!(savd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((savd(&[0.6, 0.4], &[0.5, 0.5]).unwrap() - 20.0).abs() < 1e-12);
        assert!(savd(&[0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn report_of_perfect_estimate_is_zero() {
        let t = vec![vec![1.0, 0.0], vec![0.3, 0.7]];
        let names = vec!["a".to_string(), "b".to_string()];
        let r = savd_report(&t, &t, &names).unwrap();
        assert_eq!(r.per_endmember_mean, vec![Some(0.0), Some(0.0)]);
        assert_eq!((r.overall_mean, r.overall_std), (0.0, 0.0));
    }

    #[test]
    fn report_averages_over_instances_containing_endmember() {
        let truth = vec![vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]];
        let est = vec![vec![0.9, 0.1, 0.0], vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]];
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = savd_report(&est, &truth, &names).unwrap();
        assert_eq!(r.per_instance.len(), 3);
        assert!((r.per_instance[0] - 20.0).abs() < 1e-12);
        assert!((r.per_endmember_mean[0].unwrap() - 10.0).abs() < 1e-12); // (20 + 0)/2
        assert!((r.per_endmember_mean[1].unwrap() - 0.0).abs() < 1e-12);
        assert!((r.per_endmember_mean[2].unwrap() - 100.0).abs() < 1e-12);
    }

    /// Feeding one instance per pigment with the published per-pigment SAVD
    /// reproduces the published averages and standard deviations.
    #[test]
    fn report_reproduces_published_column_statistics() {
        let columns = [
            ([18.4, 26.5, 18.5, 15.5, 23.4, 36.2, 13.3], 21.7, 7.80),
            ([20.1, 14.3, 58.9, 14.3, 22.6, 14.6, 14.0], 22.7, 16.30),
            ([23.2, 18.0, 25.3, 17.0, 25.6, 20.8, 26.7], 22.4, 3.86),
        ];
        let names: Vec<String> = (0..7).map(|k| format!("pigment{k}")).collect();
        for (values, mean, std) in columns {
            let mut truth = Vec::new();
            let mut est = Vec::new();
            for (k, v) in values.iter().enumerate() {
                let mut t = vec![0.0; 7];
                t[k] = 1.0;
                // move v/200 of the mass to the next pigment: SAVD = v
                let a = v / 200.0;
                let mut e = t.clone();
                e[k] -= a;
                e[(k + 1) % 7] += a;
                truth.push(t);
                est.push(e);
            }
            let r = savd_report(&est, &truth, &names).unwrap();
            for (m, v) in r.per_endmember_mean.iter().zip(values) {
                assert!((m.unwrap() - v).abs() < 1e-9);
            }
            assert!((r.overall_mean - mean).abs() < 0.05, "{} vs {mean}", r.overall_mean);
            // entries are rounded to 0.1: a shift of at most 0.05 in each of
            // 7 values moves the sample std by at most 0.05 sqrt(7/6)
            let slack = 0.05 * (7.0f64 / 6.0).sqrt();
            assert!((r.overall_std - std).abs() < slack, "{} vs {std}", r.overall_std);
            let population = r.overall_std * (6.0f64 / 7.0).sqrt();
            assert!((population - std).abs() > 2.0 * slack);
        }
    }

    #[test]
    fn rmse_cases() {
        let e = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.5]);
        let a = DMatrix::from_column_slice(2, 2, &[0.2, 0.8, 0.6, 0.4]);
        let d = &e * &a;
        assert!(reconstruction_rmse(&d, &e, &a).unwrap() < 1e-15);
        let zero = DMatrix::zeros(2, 2);
        let rms = (d.norm_squared() / 6.0).sqrt();
        assert!((reconstruction_rmse(&d, &e, &zero).unwrap() - rms).abs() < 1e-15);
        assert!(reconstruction_rmse(&d, &e, &DMatrix::zeros(3, 2)).is_err());
    }

    /// Planted Gaussian noise of known sigma on an exact model.
    #[test]
    fn rmse_recovers_planted_noise_level() {
        use rand_distr::{Distribution, Normal};
        let mut rng = seeded_rng(77);
        let (bands, n, p) = (20, 1000, 3);
        let e = DMatrix::from_fn(bands, p, |_, _| rng.random::<f64>());
        let a = DMatrix::from_fn(p, n, |_, _| rng.random::<f64>());
        let sigma = 0.01;
        let noise = Normal::new(0.0, sigma).unwrap();
        let d = &e * &a + DMatrix::from_fn(bands, n, |_, _| noise.sample(&mut rng));
        let r = reconstruction_rmse(&d, &e, &a).unwrap();
        assert!((r - sigma).abs() < 0.05 * sigma, "{r}");
    }
}
