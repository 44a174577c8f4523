//! Synthetic scenes with exact ground truth.
//!
//! Endmembers are smooth positive curves built from 3 to 6 Gaussian bumps.
//! Abundances are Dirichlet(α) per pixel, except for `pure_pixels` pixels per
//! endmember forced one-hot. Additive Gaussian noise is clamped at zero, which
//! biases noisy values slightly upward.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::extraction::seeded_rng;
use crate::spectral::{AbundanceField, EndmemberSet, SpectralCube, WavelengthAxis};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub p: usize,
    pub axis: WavelengthAxis,
    pub seed: u64,
    /// Dirichlet concentration.
    pub alpha: f64,
    /// One-hot pixels per endmember.
    pub pure_pixels: usize,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: SpectralCube,
    pub endmembers: EndmemberSet,
    pub abundances: AbundanceField,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("scene size {}x{}", self.width, self.height)));
        }
        if self.p == 0 || self.p > self.axis.len() {
            return Err(Error::Config(format!(
                "endmember count {} must be between 1 and the band count {}",
                self.p,
                self.axis.len()
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite and > 0, got {}", self.alpha)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if self.pure_pixels * self.p > self.width * self.height {
            return Err(Error::Config(format!(
                "{} pure pixels for each of {} endmembers do not fit in {} pixels",
                self.pure_pixels,
                self.p,
                self.width * self.height
            )));
        }
        Ok(())
    }

    /// Parse `key: value` lines (`#` starts a comment). Keys: `width`,
    /// `height`, `endmembers`, `bands`, `wavelength_min`, `wavelength_max`,
    /// `seed`, `alpha`, `pure_pixels`, `noise_sigma`. `seed` is required.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut width = 32;
        let mut height = 32;
        let mut p = 4;
        let mut bands = 198;
        let mut wmin = 400.0;
        let mut wmax = 2500.0;
        let mut seed = None;
        let mut alpha = 1.0;
        let mut pure = 1;
        let mut sigma = 0.0;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("scene spec line {}: {msg}", no + 1));
            let (key, value) = line
                .split_once(':')
                .or_else(|| line.split_once('='))
                .ok_or_else(|| bad(format!("expected 'key: value', got '{line}'")))?;
            let value = value.trim();
            fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("cannot parse '{v}'"))
            }
            match key.trim() {
                "width" => width = num(value).map_err(bad)?,
                "height" => height = num(value).map_err(bad)?,
                "endmembers" | "p" => p = num(value).map_err(bad)?,
                "bands" => bands = num(value).map_err(bad)?,
                "wavelength_min" => wmin = num(value).map_err(bad)?,
                "wavelength_max" => wmax = num(value).map_err(bad)?,
                "seed" => seed = Some(num(value).map_err(bad)?),
                "alpha" => alpha = num(value).map_err(bad)?,
                "pure_pixels" => pure = num(value).map_err(bad)?,
                "noise_sigma" => sigma = num(value).map_err(bad)?,
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let spec = SceneSpec {
            width,
            height,
            p,
            axis: WavelengthAxis::uniform(wmin, wmax, bands)?,
            seed: seed.ok_or_else(|| Error::Config("scene spec needs an explicit seed".into()))?,
            alpha,
            pure_pixels: pure,
            noise_sigma: sigma,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn smooth_signature(axis: &WavelengthAxis, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = (axis.min(), axis.max());
    let range = hi - lo;
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(3..=6))
        .map(|_| {
            let center = lo + range * rng.random::<f64>();
            let width = range * (0.04 + 0.21 * rng.random::<f64>());
            let amp = 0.2 + 0.8 * rng.random::<f64>();
            (center, width, amp)
        })
        .collect();
    let offset = 0.02 + 0.1 * rng.random::<f64>();
    let peak = 0.6 + 0.35 * rng.random::<f64>();
    let raw: Vec<f64> = axis
        .samples()
        .iter()
        .map(|&l| offset + bumps.iter().map(|(c, w, a)| a * (-0.5 * ((l - c) / w).powi(2)).exp()).sum::<f64>())
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.iter().map(|v| v * peak / max).collect()
}

fn dirichlet(alpha: f64, p: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..p).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // every draw underflowed (tiny alpha): the limit is a vertex
        let mut v = vec![0.0; p];
        v[rng.random_range(0..p)] = 1.0;
        v
    }
}

/// Build a scene. Pixel `j` draws from its own ChaCha8 stream `j + 1`, so the
/// result does not depend on generation order.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let n = spec.width * spec.height;
    let (p, bands) = (spec.p, spec.axis.len());
    let mut rng = seeded_rng(spec.seed);

    let signatures: Vec<Vec<f64>> = (0..p).map(|_| smooth_signature(&spec.axis, &mut rng)).collect();
    let names = (1..=p).map(|k| format!("em{k}")).collect();
    let endmembers = EndmemberSet::new(spec.axis.clone(), signatures)?.with_names(names)?;

    let mut pure_of = vec![None; n];
    for (slot, j) in index::sample(&mut rng, n, p * spec.pure_pixels).into_iter().enumerate() {
        pure_of[j] = Some(slot / spec.pure_pixels.max(1));
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(n * bands);
    let mut fractions = Vec::with_capacity(n * p);
    for (j, pure) in pure_of.iter().enumerate() {
        let mut px_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        px_rng.set_stream(j as u64 + 1);
        let a = match pure {
            Some(k) => {
                let mut v = vec![0.0; p];
                v[*k] = 1.0;
                v
            }
            None => dirichlet(spec.alpha, p, &mut px_rng),
        };
        for b in 0..bands {
            let mut v: f64 = (0..p).map(|k| a[k] * endmembers.signature(k)[b]).sum();
            if spec.noise_sigma > 0.0 {
                v = (v + noise.sample(&mut px_rng)).max(0.0);
            }
            data.push(v);
        }
        fractions.extend_from_slice(&a);
    }

    Ok(Scene {
        cube: SpectralCube::new(spec.width, spec.height, spec.axis.clone(), data, "reflectance")?,
        abundances: AbundanceField::new(spec.width, spec.height, p, fractions, true)?,
        endmembers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SceneSpec {
        SceneSpec {
            width: 8,
            height: 6,
            p: 3,
            axis: WavelengthAxis::uniform(400.0, 2500.0, 50).unwrap(),
            seed,
            alpha: 1.0,
            pure_pixels: 2,
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn noiseless_scene_contains_each_endmember() {
        let s = generate(&spec(3)).unwrap();
        for k in 0..3 {
            let hits = s.cube.pixels().filter(|px| *px == s.endmembers.signature(k)).count();
            assert_eq!(hits, 2, "endmember {k}");
        }
    }

    #[test]
    fn rows_sum_to_one_and_values_valid() {
        let s = generate(&SceneSpec { noise_sigma: 0.02, alpha: 0.3, ..spec(4) }).unwrap();
        for row in s.abundances.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(s.cube.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(s.endmembers.signatures().iter().flatten().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&spec(5)).unwrap();
        let b = generate(&spec(5)).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.endmembers, b.endmembers);
        assert_eq!(a.abundances, b.abundances);
        let c = generate(&spec(6)).unwrap();
        assert_ne!(a.cube, c.cube);
    }

    #[test]
    fn noiseless_cube_is_exact_mixture() {
        let s = generate(&spec(7)).unwrap();
        for (j, px) in s.cube.pixels().enumerate() {
            let m = crate::spectral::mix(&s.endmembers, s.abundances.pixel(j)).unwrap();
            assert_eq!(px, m.values());
        }
    }

    #[test]
    fn validation() {
        assert!(generate(&SceneSpec { p: 51, ..spec(1) }).is_err());
        assert!(generate(&SceneSpec { alpha: 0.0, ..spec(1) }).is_err());
        assert!(generate(&SceneSpec { noise_sigma: -1.0, ..spec(1) }).is_err());
        assert!(generate(&SceneSpec { pure_pixels: 17, ..spec(1) }).is_err());
    }

    #[test]
    fn parses_key_value_text() {
        let text = "# demo\nwidth: 10\nheight=4\nendmembers: 3\nbands: 20\nwavelength_min: 400\nwavelength_max: 1000\nseed: 9\nalpha: 0.5\npure_pixels: 1\nnoise_sigma: 0.001\n";
        let s = SceneSpec::from_kv_str(text).unwrap();
        assert_eq!((s.width, s.height, s.p, s.axis.len(), s.seed), (10, 4, 3, 20, 9));
        assert!(SceneSpec::from_kv_str("width: 3").is_err()); // no seed
        assert!(SceneSpec::from_kv_str("seed: 1\ncolour: red").is_err());
        assert!(SceneSpec::from_kv_str("seed: x").is_err());
    }
}
