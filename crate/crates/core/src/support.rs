//! Bin grids, latent tensors and probability mass functions.
//!
//! Every distribution in the crate lives on a unit-width integer grid
//! `y_min..=y_max`. Bin `i` (1-based) is centered at `y_min + i - 1`.

use crate::error::{mismatch, Error, Result};

/// Probability floor applied to any pmf that is used for coding or for
/// code-length evaluation.
pub const EPS_P: f64 = 1.0 / 65536.0;

/// Absolute tolerance on the total mass of a [`Pmf`].
pub const MASS_TOL: f64 = 1e-9;

/// Integer bin grid `[y_min, y_max]` with unit bin width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HistogramSpec {
    y_min: i32,
    y_max: i32,
}

impl HistogramSpec {
    pub fn new(y_min: i32, y_max: i32) -> Result<Self> {
        if y_max < y_min {
            return Err(Error::InvalidArgument(format!(
                "empty support [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { y_min, y_max })
    }

    /// `[-127, 128]`, 256 bins.
    pub fn high_rate() -> Self {
        Self { y_min: -127, y_max: 128 }
    }

    /// `[-63, 64]`, 128 bins.
    pub fn low_rate() -> Self {
        Self { y_min: -63, y_max: 64 }
    }

    /// Spec with `bins` bins laid out as `[-(bins/2 - 1), bins/2]`, the same
    /// layout as the two presets.
    pub fn centered(bins: usize) -> Result<Self> {
        if bins < 2 || bins % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "centered spec needs an even bin count >= 2, got {bins}"
            )));
        }
        let half = (bins / 2) as i32;
        Self::new(-(half - 1), half)
    }

    pub fn y_min(&self) -> i32 {
        self.y_min
    }

    pub fn y_max(&self) -> i32 {
        self.y_max
    }

    pub fn num_bins(&self) -> usize {
        (self.y_max as i64 - self.y_min as i64 + 1) as usize
    }

    pub fn bin_width(&self) -> f64 {
        1.0
    }

    /// Center of the 1-based bin `i`.
    pub fn bin_center(&self, i: usize) -> i32 {
        debug_assert!(i >= 1 && i <= self.num_bins());
        self.y_min + i as i32 - 1
    }

    pub fn contains(&self, value: i64) -> bool {
        value >= self.y_min as i64 && value <= self.y_max as i64
    }

    /// 1-based index of the bin holding `value`.
    pub fn bin_index(&self, value: i64) -> Result<usize> {
        Ok(self.bin_offset(value)? + 1)
    }

    /// 0-based offset of the bin holding `value`.
    pub fn bin_offset(&self, value: i64) -> Result<usize> {
        if !self.contains(value) {
            return Err(Error::OutOfSupport {
                value,
                y_min: self.y_min,
                y_max: self.y_max,
            });
        }
        Ok((value - self.y_min as i64) as usize)
    }

    /// Round half away from zero, then clamp into the support. Returns the
    /// integer and whether clamping changed it.
    pub fn quantize(&self, raw: f64) -> (i32, bool) {
        let rounded = raw.round();
        if rounded.is_nan() {
            return (0.clamp(self.y_min, self.y_max), true);
        }
        if rounded < self.y_min as f64 {
            (self.y_min, true)
        } else if rounded > self.y_max as f64 {
            (self.y_max, true)
        } else {
            (rounded as i32, false)
        }
    }
}

/// Integer-quantized latent with shape `channels x height x width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    downscale: u32,
    spec: HistogramSpec,
    data: Vec<i32>,
}

impl LatentTensor {
    /// Builds a tensor from in-support integers (row-major, channel-major).
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        downscale: u32,
        spec: HistogramSpec,
        data: Vec<i32>,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::BadShape(format!(
                "{} values for shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        if downscale == 0 {
            return Err(Error::InvalidArgument("downscale must be positive".into()));
        }
        if let Some(&v) = data.iter().find(|&&v| !spec.contains(v as i64)) {
            return Err(Error::OutOfSupport {
                value: v as i64,
                y_min: spec.y_min,
                y_max: spec.y_max,
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            downscale,
            spec,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn downscale(&self) -> u32 {
        self.downscale
    }

    pub fn spec(&self) -> HistogramSpec {
        self.spec
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    /// Elements per channel, `H_y * W_y`.
    pub fn pixels_per_channel(&self) -> usize {
        self.height * self.width
    }

    /// Image pixels `H * W = s^2 * H_y * W_y`, the bpp denominator.
    pub fn image_pixels(&self) -> f64 {
        let s = self.downscale as f64;
        s * s * self.pixels_per_channel() as f64
    }

    pub fn channel(&self, c: usize) -> &[i32] {
        let n = self.pixels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Result of [`clamp_to_support`].
#[derive(Debug, Clone)]
pub struct Clamped {
    pub latent: LatentTensor,
    /// Number of values that fell outside the support after rounding.
    pub clamps: usize,
}

/// Rounds (half away from zero) and clamps a real tensor into `spec`.
pub fn clamp_to_support(
    raw: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    downscale: u32,
    spec: HistogramSpec,
) -> Result<Clamped> {
    let mut clamps = 0;
    let data = raw
        .iter()
        .map(|&x| {
            let (v, clamped) = spec.quantize(x);
            clamps += clamped as usize;
            v
        })
        .collect();
    let latent = LatentTensor::new(channels, height, width, downscale, spec, data)?;
    Ok(Clamped { latent, clamps })
}

/// A discrete distribution over the bins of a [`HistogramSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    spec: HistogramSpec,
    mass: Vec<f64>,
}

impl Pmf {
    /// Validates that `mass` is non-negative and sums to one.
    pub fn new(spec: HistogramSpec, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != spec.num_bins() {
            return Err(mismatch(format!(
                "pmf has {} bins, spec has {}",
                mass.len(),
                spec.num_bins()
            )));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("pmf has negative or non-finite mass".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("pmf mass sums to {total}")));
        }
        Ok(Self { spec, mass })
    }

    /// Normalizes non-negative weights. Fails if they are all zero.
    pub fn from_weights(spec: HistogramSpec, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument("weights do not sum to a positive value".into()));
        }
        Self::new(spec, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(spec: HistogramSpec) -> Self {
        let b = spec.num_bins();
        Self {
            spec,
            mass: vec![1.0 / b as f64; b],
        }
    }

    /// All mass on the 1-based bin `i`.
    pub fn point(spec: HistogramSpec, i: usize) -> Self {
        let mut mass = vec![0.0; spec.num_bins()];
        mass[i - 1] = 1.0;
        Self { spec, mass }
    }

    pub fn spec(&self) -> HistogramSpec {
        self.spec
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn num_bins(&self) -> usize {
        self.mass.len()
    }

    /// Mass of the 1-based bin `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.mass[i - 1]
    }

    /// Floors every entry at `eps` and renormalizes.
    pub fn floored(&self, eps: f64) -> Pmf {
        let raised: Vec<f64> = self.mass.iter().map(|&m| m.max(eps)).collect();
        let total: f64 = raised.iter().sum();
        Pmf {
            spec: self.spec,
            mass: raised.into_iter().map(|m| m / total).collect(),
        }
    }
}

/// One pmf per latent channel, all on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfBank {
    spec: HistogramSpec,
    pmfs: Vec<Pmf>,
}

impl PmfBank {
    pub fn new(pmfs: Vec<Pmf>) -> Result<Self> {
        let spec = pmfs
            .first()
            .map(Pmf::spec)
            .ok_or_else(|| Error::InvalidArgument("empty pmf bank".into()))?;
        if pmfs.iter().any(|p| p.spec() != spec) {
            return Err(mismatch("pmfs in a bank must share one histogram spec"));
        }
        Ok(Self { spec, pmfs })
    }

    pub fn spec(&self) -> HistogramSpec {
        self.spec
    }

    pub fn channels(&self) -> usize {
        self.pmfs.len()
    }

    pub fn pmfs(&self) -> &[Pmf] {
        &self.pmfs
    }

    pub fn get(&self, c: usize) -> &Pmf {
        &self.pmfs[c]
    }

    pub fn floored(&self, eps: f64) -> PmfBank {
        PmfBank {
            spec: self.spec,
            pmfs: self.pmfs.iter().map(|p| p.floored(eps)).collect(),
        }
    }

    /// Channel-major flat copy, `channels * bins` values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.pmfs.iter().flat_map(|p| p.mass().iter().copied()).collect()
    }

    pub(crate) fn ensure_compatible(&self, other: &PmfBank) -> Result<()> {
        if self.spec != other.spec || self.channels() != other.channels() {
            return Err(mismatch(format!(
                "banks differ: {}x{} vs {}x{}",
                self.channels(),
                self.spec.num_bins(),
                other.channels(),
                other.spec.num_bins()
            )));
        }
        Ok(())
    }
}
