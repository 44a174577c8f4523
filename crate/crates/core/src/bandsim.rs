//! Multispectral simulation from a hyperspectral cube and a camera model.
//!
//! Each camera channel value is `Y = ∫ I(λ) R(λ) S(λ) dλ`. The sensitivity
//! `S` (and the illuminant `I`, when given) is linearly interpolated onto the
//! reflectance axis and the product is integrated with the trapezoidal rule.
//! Sensitivity outside a channel's sampled support is zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{check_values, BandKind, EndmemberSet, SpectralCube, Spectrum, WavelengthAxis};

/// One camera channel's sensitivity curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityChannel {
    name: String,
    axis: WavelengthAxis,
    response: Vec<f64>,
    kind: BandKind,
}

impl SensitivityChannel {
    pub fn new(name: impl Into<String>, axis: WavelengthAxis, response: Vec<f64>, kind: BandKind) -> Result<Self> {
        let name = name.into();
        if response.len() != axis.len() {
            return Err(Error::Shape(format!(
                "channel '{name}' has {} responses for {} wavelengths",
                response.len(),
                axis.len()
            )));
        }
        check_values("sensitivity", &response)?;
        if response.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!("channel '{name}' has an all-zero response")));
        }
        Ok(SensitivityChannel {
            name,
            axis,
            response,
            kind,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn kind(&self) -> BandKind {
        self.kind
    }

    /// Response-weighted mean wavelength over the channel's own samples.
    pub fn centroid(&self) -> f64 {
        let lambda = self.axis.samples();
        let weighted: Vec<f64> = lambda.iter().zip(&self.response).map(|(l, s)| l * s).collect();
        trapezoid(lambda, &weighted) / trapezoid(lambda, &self.response)
    }
}

/// A camera: ordered channels plus an optional illuminant (unit when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityModel {
    channels: Vec<SensitivityChannel>,
    illumination: Option<Spectrum>,
}

impl SensitivityModel {
    pub fn new(channels: Vec<SensitivityChannel>, illumination: Option<Spectrum>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("a camera needs at least one channel".into()));
        }
        Ok(SensitivityModel {
            channels,
            illumination,
        })
    }

    pub fn with_illumination(mut self, illumination: Spectrum) -> Self {
        self.illumination = Some(illumination);
        self
    }

    pub fn channels(&self) -> &[SensitivityChannel] {
        &self.channels
    }

    pub fn illumination(&self) -> Option<&Spectrum> {
        self.illumination.as_ref()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimulationOptions {
    /// Divide each channel by `∫ S dλ` over the reflectance axis.
    pub normalize: bool,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Trapezoid weights `w` such that `Σ w_i g_i` is the trapezoid integral of `g`.
fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (x[i + 1] - x[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Linear interpolation of `(xs, ys)` at `x`; zero outside `[xs[0], xs[n-1]]`.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x < xs[0] || x > xs[n - 1] {
        return 0.0;
    }
    if x == xs[n - 1] {
        return ys[n - 1];
    }
    // first index with xs[i] > x; x sits in [xs[i-1], xs[i])
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
}

fn interpolate_onto(source: &WavelengthAxis, values: &[f64], target: &WavelengthAxis) -> Vec<f64> {
    let xs = source.samples();
    target.samples().iter().map(|&x| interpolate(xs, values, x)).collect()
}

/// Sensitivity interpolated onto `target`, zero outside the source support.
///
/// Fails with [`Error::EmptyOverlap`] when no target sample falls inside the
/// channel's support with a nonzero response.
pub fn resample(channel: &SensitivityChannel, target: &WavelengthAxis) -> Result<SensitivityChannel> {
    if channel.axis.len() < 2 {
        return Err(Error::InvalidAxis(format!(
            "channel '{}' has a degenerate axis",
            channel.name
        )));
    }
    let response = if channel.axis == *target {
        channel.response.clone()
    } else {
        interpolate_onto(&channel.axis, &channel.response, target)
    };
    if response.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyOverlap {
            channel: channel.name.clone(),
        });
    }
    Ok(SensitivityChannel {
        name: channel.name.clone(),
        axis: target.clone(),
        response,
        kind: channel.kind,
    })
}

fn same_axis(a: &WavelengthAxis, b: &WavelengthAxis) -> bool {
    a.approx_eq(b, 1e-12)
}

/// Per-sample weights `k_i` with `Y = Σ k_i R_i`.
fn channel_weights(illumination: &[f64], channel: &SensitivityChannel) -> Vec<f64> {
    let w = trapezoid_weights(channel.axis.samples());
    w.iter()
        .zip(illumination)
        .zip(&channel.response)
        .map(|((w, i), s)| w * i * s)
        .collect()
}

/// Trapezoidal `∫ I R S dλ` with all three on the same axis.
pub fn integrate_channel(reflectance: &Spectrum, illumination: &Spectrum, channel: &SensitivityChannel) -> Result<f64> {
    if !same_axis(reflectance.axis(), &channel.axis) || !same_axis(reflectance.axis(), illumination.axis()) {
        return Err(Error::Shape(format!(
            "channel '{}' must be resampled to the reflectance axis before integration",
            channel.name
        )));
    }
    if channel.response.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyOverlap {
            channel: channel.name.clone(),
        });
    }
    let k = channel_weights(illumination.values(), channel);
    Ok(k.iter().zip(reflectance.values()).map(|(k, r)| k * r).sum())
}

/// A camera prepared for one reflectance axis: per-channel quadrature
/// weights, ordered by reference wavelength.
#[derive(Debug, Clone)]
pub struct BandSimulator {
    input_axis: WavelengthAxis,
    output_axis: WavelengthAxis,
    /// Indices into the camera's channel list, in output band order.
    order: Vec<usize>,
    weights: Vec<Vec<f64>>,
    kinds: Vec<BandKind>,
    names: Vec<String>,
}

impl BandSimulator {
    pub fn new(camera: &SensitivityModel, axis: &WavelengthAxis, options: SimulationOptions) -> Result<Self> {
        let illumination = match camera.illumination() {
            Some(ill) if same_axis(ill.axis(), axis) => ill.values().to_vec(),
            Some(ill) => interpolate_onto(ill.axis(), ill.values(), axis),
            None => vec![1.0; axis.len()],
        };

        let mut prepared = Vec::with_capacity(camera.channels().len());
        for (idx, channel) in camera.channels().iter().enumerate() {
            let on_axis = resample(channel, axis)?;
            let mut k = channel_weights(&illumination, &on_axis);
            if options.normalize {
                let area = trapezoid(axis.samples(), on_axis.response());
                k.iter_mut().for_each(|v| *v /= area);
            }
            prepared.push((channel.centroid(), idx, k));
        }
        // Output bands are sorted by reference wavelength so the band axis
        // stays strictly increasing; kinds and names keep track of channels.
        prepared.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let centers: Vec<f64> = prepared.iter().map(|p| p.0).collect();
        if centers.len() < 2 {
            return Err(Error::Config(
                "a simulated cube needs at least 2 channels to form a band axis".into(),
            ));
        }
        let output_axis = WavelengthAxis::new(centers)
            .map_err(|e| Error::Config(format!("channel reference wavelengths must be distinct: {e}")))?;

        let chans = camera.channels();
        Ok(BandSimulator {
            input_axis: axis.clone(),
            output_axis,
            kinds: prepared.iter().map(|p| chans[p.1].kind()).collect(),
            names: prepared.iter().map(|p| chans[p.1].name().to_string()).collect(),
            order: prepared.iter().map(|p| p.1).collect(),
            weights: prepared.into_iter().map(|p| p.2).collect(),
        })
    }

    pub fn input_axis(&self) -> &WavelengthAxis {
        &self.input_axis
    }

    /// Channel reference (centroid) wavelengths in output order.
    pub fn output_axis(&self) -> &WavelengthAxis {
        &self.output_axis
    }

    pub fn kinds(&self) -> &[BandKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// For each output band, the index of the camera channel it came from.
    pub fn channel_order(&self) -> &[usize] {
        &self.order
    }

    /// Channel values for one reflectance vector on the input axis.
    pub fn apply(&self, reflectance: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|k| k.iter().zip(reflectance).map(|(k, r)| k * r).sum())
            .collect()
    }

    pub fn simulate_cube(&self, cube: &SpectralCube) -> Result<SpectralCube> {
        if !same_axis(cube.axis(), &self.input_axis) {
            return Err(Error::Shape("cube axis differs from the simulator's input axis".into()));
        }
        let data: Vec<f64> = cube
            .data()
            .par_chunks_exact(cube.bands())
            .flat_map_iter(|px| self.apply(px))
            .collect();
        SpectralCube::new(cube.width(), cube.height(), self.output_axis.clone(), data, "multispectral")?
            .with_band_info(self.kinds.clone(), Some(self.names.clone()))
    }

    /// Multispectral version of each signature (the multispectral ground truth).
    pub fn simulate_endmembers(&self, endmembers: &EndmemberSet) -> Result<EndmemberSet> {
        if !same_axis(endmembers.axis(), &self.input_axis) {
            return Err(Error::Shape("endmember axis differs from the simulator's input axis".into()));
        }
        let sigs = endmembers.signatures().iter().map(|s| self.apply(s)).collect();
        let mut out = EndmemberSet::new(self.output_axis.clone(), sigs)?;
        if let Some(names) = endmembers.names() {
            out = out.with_names(names.to_vec())?;
        }
        if let Some(ix) = endmembers.pixel_indices() {
            out = out.with_pixel_indices(ix.to_vec())?;
        }
        Ok(out)
    }
}

/// Simulate every pixel of `cube` through `camera`.
pub fn simulate_cube(cube: &SpectralCube, camera: &SensitivityModel, options: SimulationOptions) -> Result<SpectralCube> {
    BandSimulator::new(camera, cube.axis(), options)?.simulate_cube(cube)
}
