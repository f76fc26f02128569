//! Synthetic latent corpora whose channel distributions vary from image to
//! image, so a static pmf bank pays a measurable amortization gap.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codecs::{mixture_masses, GmmComponent};
use crate::error::{Error, Result};
use crate::support::{HistogramSpec, LatentTensor, Pmf, PmfBank};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub channels: usize,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub downscale: u32,
    pub spec: HistogramSpec,
    pub seed: u64,
    /// Per-image shift of every channel's mixture is drawn from `U(-a, a)`.
    pub max_shift: f64,
    /// Per-image scale is log-uniform on `[1/k, k]`.
    pub max_scale: f64,
}

impl SyntheticCorpusSpec {
    pub fn new(channels: usize, images: usize, height: usize, width: usize, spec: HistogramSpec, seed: u64) -> Self {
        Self { channels, images, height, width, downscale: 16, spec, seed, max_shift: 6.0, max_scale: 2.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.downscale == 0 {
            return Err(Error::BadShape(format!(
                "corpus dims must be positive: C={} H={} W={} s={}",
                self.channels, self.height, self.width, self.downscale
            )));
        }
        if !(self.max_shift >= 0.0 && self.max_scale >= 1.0) {
            return Err(Error::InvalidArgument("max_shift >= 0 and max_scale >= 1 required".into()));
        }
        Ok(())
    }
}

/// One generated image: the sampled latent and the pmfs it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub latent: LatentTensor,
    pub truth: PmfBank,
}

/// Per-channel prototype mixture shared by all images.
fn prototypes(spec: &SyntheticCorpusSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<GmmComponent>> {
    let half = (spec.spec.num_bins() as f64 / 8.0).max(1.0);
    (0..spec.channels)
        .map(|_| {
            let k = rng.random_range(1..=3);
            let center = rng.random_range(-half..half);
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights
                .iter()
                .map(|w| GmmComponent {
                    weight: w / total,
                    mean: center + rng.random_range(-half / 2.0..half / 2.0),
                    sigma: rng.random_range(0.6..4.0),
                })
                .collect()
        })
        .collect()
}

/// Deterministic corpus from `spec.seed`.
///
/// Every image draws one global shift and scale applied to all channels,
/// plus a small per-channel jitter of the same kind, and re-draws the
/// mixture weights around the prototype.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<SyntheticImage>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec, &mut rng);
    let n = spec.height * spec.width;
    let ln_k = spec.max_scale.ln();
    (0..spec.images)
        .map(|_| {
            let shift = if spec.max_shift > 0.0 { rng.random_range(-spec.max_shift..spec.max_shift) } else { 0.0 };
            let scale = if ln_k > 0.0 { rng.random_range(-ln_k..ln_k).exp() } else { 1.0 };
            let mut data = Vec::with_capacity(spec.channels * n);
            let mut pmfs = Vec::with_capacity(spec.channels);
            for proto in &protos {
                let jitter_shift = rng.random_range(-1.0..1.0);
                let jitter_scale = rng.random_range(-0.2f64..0.2).exp();
                let mut comps: Vec<GmmComponent> = proto
                    .iter()
                    .map(|c| GmmComponent {
                        weight: c.weight * rng.random_range(0.5..1.5),
                        mean: c.mean * scale + shift + jitter_shift,
                        sigma: (c.sigma * scale * jitter_scale).max(0.3),
                    })
                    .collect();
                let total: f64 = comps.iter().map(|c| c.weight).sum();
                comps.iter_mut().for_each(|c| c.weight /= total);
                let pmf = exact_mixture(&comps, spec.spec)?;
                let sampler = WeightedIndex::new(pmf.mass()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                data.extend((0..n).map(|_| spec.spec.bin_center(sampler.sample(&mut rng) + 1)));
                pmfs.push(pmf);
            }
            let latent = LatentTensor::new(spec.channels, spec.height, spec.width, spec.downscale, spec.spec, data)?;
            Ok(SyntheticImage { latent, truth: PmfBank::new(pmfs)? })
        })
        .collect()
}

fn exact_mixture(comps: &[GmmComponent], spec: HistogramSpec) -> Result<Pmf> {
    Pmf::from_weights(spec, &mixture_masses(comps, spec))
}
