//! Per-channel Gaussian mixtures fitted to the histogram and sent as 8-bit
//! side information.

use crate::error::{corrupt, Error, Result};
use crate::support::{HistogramSpec, Pmf, EPS_P};

pub const SIGMA_MIN: f64 = 0.05;
pub const MAX_COMPONENTS: usize = 3;
const EM_MAX_ITERS: usize = 200;
const EM_TOL: f64 = 1e-8;
const LEVELS: f64 = 255.0;

/// Largest standard deviation on the grid: half the support width.
pub fn sigma_max(spec: HistogramSpec) -> f64 {
    ((spec.y_max() - spec.y_min()) as f64 / 2.0).max(SIGMA_MIN * 2.0)
}

/// `(3 * K_g - 1) * C * 8`.
pub fn gmm_side_bits(k: usize, channels: usize) -> u64 {
    ((3 * k - 1) * channels * 8) as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// 8-bit codes of one channel's mixture; the last weight is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GmmCodes {
    pub weights: Vec<u8>,
    pub means: Vec<u8>,
    pub sigmas: Vec<u8>,
}

impl GmmCodes {
    pub fn components(&self) -> usize {
        self.means.len()
    }

    /// Per component `w, mu, sigma`, with the final `w` left out.
    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        let k = self.components();
        for i in 0..k {
            if i + 1 < k {
                out.push(self.weights[i]);
            }
            out.push(self.means[i]);
            out.push(self.sigmas[i]);
        }
    }

    pub fn from_bytes(bytes: &[u8], k: usize) -> Result<Self> {
        if bytes.len() != 3 * k - 1 {
            return Err(corrupt(format!("{} bytes for a {k}-component mixture", bytes.len())));
        }
        let mut it = bytes.iter().copied();
        let mut codes = GmmCodes { weights: Vec::new(), means: Vec::new(), sigmas: Vec::new() };
        for i in 0..k {
            if i + 1 < k {
                codes.weights.push(it.next().expect("length checked"));
            }
            codes.means.push(it.next().expect("length checked"));
            codes.sigmas.push(it.next().expect("length checked"));
        }
        let used: u32 = codes.weights.iter().map(|&w| w as u32).sum();
        if used > LEVELS as u32 {
            return Err(corrupt(format!("mixture weights sum to {used}/255")));
        }
        Ok(codes)
    }
}

/// One channel's mixture with both its exact and its quantized form.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub fitted: Vec<GmmComponent>,
    pub codes: GmmCodes,
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn mu_step(spec: HistogramSpec) -> f64 {
    (spec.y_max() - spec.y_min()) as f64 / LEVELS
}

fn log_sigma_step(spec: HistogramSpec) -> f64 {
    (sigma_max(spec) / SIGMA_MIN).ln() / LEVELS
}

fn quantize_unit(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * LEVELS).round() as u8
}

pub fn quantize_mean(mu: f64, spec: HistogramSpec) -> u8 {
    let span = (spec.y_max() - spec.y_min()) as f64;
    if span == 0.0 {
        return 0;
    }
    quantize_unit((mu - spec.y_min() as f64) / span)
}

pub fn dequantize_mean(code: u8, spec: HistogramSpec) -> f64 {
    spec.y_min() as f64 + code as f64 * mu_step(spec)
}

pub fn quantize_sigma(sigma: f64, spec: HistogramSpec) -> u8 {
    let s = sigma.clamp(SIGMA_MIN, sigma_max(spec));
    quantize_unit((s / SIGMA_MIN).ln() / (sigma_max(spec) / SIGMA_MIN).ln())
}

pub fn dequantize_sigma(code: u8, spec: HistogramSpec) -> f64 {
    SIGMA_MIN * (code as f64 * log_sigma_step(spec)).exp()
}

/// Grid spacing of the mean codes and the ratio between adjacent sigma codes.
pub fn grid_steps(spec: HistogramSpec) -> (f64, f64) {
    (mu_step(spec), log_sigma_step(spec).exp())
}

pub fn quantize(components: &[GmmComponent], spec: HistogramSpec) -> GmmCodes {
    let k = components.len();
    let mut used = 0u32;
    let mut weights = Vec::with_capacity(k.saturating_sub(1));
    for c in &components[..k - 1] {
        let w = (quantize_unit(c.weight) as u32).min(LEVELS as u32 - used);
        used += w;
        weights.push(w as u8);
    }
    GmmCodes {
        weights,
        means: components.iter().map(|c| quantize_mean(c.mean, spec)).collect(),
        sigmas: components.iter().map(|c| quantize_sigma(c.sigma, spec)).collect(),
    }
}

pub fn dequantize(codes: &GmmCodes, spec: HistogramSpec) -> Vec<GmmComponent> {
    let k = codes.components();
    let used: u32 = codes.weights.iter().map(|&w| w as u32).sum();
    (0..k)
        .map(|i| {
            let w = if i + 1 < k { codes.weights[i] as u32 } else { LEVELS as u32 - used };
            GmmComponent {
                weight: w as f64 / LEVELS,
                mean: dequantize_mean(codes.means[i], spec),
                sigma: dequantize_sigma(codes.sigmas[i], spec),
            }
        })
        .collect()
}

/// Exact bin masses of a mixture: Gaussian integrals over each bin with the
/// tails folded into the edge bins.
pub fn mixture_masses(components: &[GmmComponent], spec: HistogramSpec) -> Vec<f64> {
    let b = spec.num_bins();
    let mut mass = vec![0.0; b];
    for c in components {
        if c.weight == 0.0 {
            continue;
        }
        let mut prev = 0.0;
        for (i, m) in mass.iter_mut().enumerate() {
            let upper = if i + 1 == b { 1.0 } else { phi((spec.bin_center(i + 1) as f64 + 0.5 - c.mean) / c.sigma) };
            *m += c.weight * (upper - prev);
            prev = upper;
        }
    }
    mass
}

/// [`mixture_masses`] floored at `EPS_P` and renormalized.
pub fn gmm_reconstruct(components: &[GmmComponent], spec: HistogramSpec) -> Result<Pmf> {
    let mass = mixture_masses(components, spec);
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mixture has no mass".into()));
    }
    Pmf::from_weights(spec, &mass).map(|p| p.floored(EPS_P))
}

fn gauss_logpdf(x: f64, c: &GmmComponent) -> f64 {
    let z = (x - c.mean) / c.sigma;
    -0.5 * z * z - c.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM on bin centers weighted by mass. Returns the unquantized mixture.
///
/// Variances are Sheppard-corrected (`- 1/12`) after convergence, since the
/// data are integer bin centers of a continuous density.
pub fn fit_mixture(p: &Pmf, k: usize) -> Result<Vec<GmmComponent>> {
    if k == 0 || k > MAX_COMPONENTS {
        return Err(Error::InvalidArgument(format!("K_g = {k} outside 1..={MAX_COMPONENTS}")));
    }
    let spec = p.spec();
    let pts: Vec<(f64, f64)> = p
        .mass()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, &m)| (spec.bin_center(i + 1) as f64, m))
        .collect();
    if pts.len() == 1 {
        let mean = pts[0].0;
        return Ok(vec![GmmComponent { weight: 1.0 / k as f64, mean, sigma: SIGMA_MIN }; k]);
    }

    let mean: f64 = pts.iter().map(|(x, m)| x * m).sum();
    let var: f64 = pts.iter().map(|(x, m)| m * (x - mean).powi(2)).sum();
    let mut comps: Vec<GmmComponent> = (0..k)
        .map(|j| {
            let target = (j as f64 + 0.5) / k as f64;
            let mut acc = 0.0;
            let mut at = pts[pts.len() - 1].0;
            for &(x, m) in &pts {
                acc += m;
                if acc >= target {
                    at = x;
                    break;
                }
            }
            GmmComponent { weight: 1.0 / k as f64, mean: at, sigma: (var.sqrt() / k as f64).max(SIGMA_MIN) }
        })
        .collect();

    let mut resp = vec![0.0; k];
    let mut last_ll = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERS {
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        let mut sxx = vec![0.0; k];
        let mut ll = 0.0;
        for &(x, m) in &pts {
            for (r, c) in resp.iter_mut().zip(&comps) {
                *r = c.weight.ln() + gauss_logpdf(x, c);
            }
            let lse = log_sum_exp(&resp);
            ll += m * lse;
            for j in 0..k {
                let r = m * (resp[j] - lse).exp();
                nk[j] += r;
                sx[j] += r * x;
                sxx[j] += r * x * x;
            }
        }
        for j in 0..k {
            if nk[j] <= 1e-300 {
                continue;
            }
            let mu = sx[j] / nk[j];
            let v = (sxx[j] / nk[j] - mu * mu).max(0.0);
            comps[j] = GmmComponent { weight: nk[j], mean: mu, sigma: v.sqrt().max(SIGMA_MIN) };
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= total;
        }
        if (ll - last_ll).abs() < EM_TOL {
            break;
        }
        last_ll = ll;
    }
    for c in &mut comps {
        c.sigma = (c.sigma * c.sigma - 1.0 / 12.0).max(SIGMA_MIN * SIGMA_MIN).sqrt();
    }
    Ok(comps)
}

/// Fits and quantizes one channel.
pub fn gmm_fit(p: &Pmf, k: usize) -> Result<GmmParams> {
    let fitted = fit_mixture(p, k)?;
    let codes = quantize(&fitted, p.spec());
    Ok(GmmParams { fitted, codes })
}

/// Side-info-only back-end: every channel's pmf is sent as a `K_g`-component mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmmModel {
    pub spec: HistogramSpec,
    pub components: usize,
}

impl GmmModel {
    pub fn new(spec: HistogramSpec, components: usize) -> Result<Self> {
        if components == 0 || components > MAX_COMPONENTS {
            return Err(Error::InvalidArgument(format!("K_g = {components} outside 1..={MAX_COMPONENTS}")));
        }
        Ok(Self { spec, components })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discretized(spec: HistogramSpec, comps: &[GmmComponent]) -> Pmf {
        gmm_reconstruct(comps, spec).unwrap()
    }

    #[test]
    fn side_bits() {
        assert_eq!(gmm_side_bits(1, 192), 3072);
        assert_eq!(gmm_side_bits(3, 16), 1024);
        assert_eq!(gmm_side_bits(2, 192), 7680);
    }

    #[test]
    fn recovers_single_gaussian() {
        let spec = HistogramSpec::new(-16, 16).unwrap();
        let p = discretized(spec, &[GmmComponent { weight: 1.0, mean: 0.0, sigma: 2.0 }]);
        let fit = gmm_fit(&p, 1).unwrap();
        let d = dequantize(&fit.codes, spec);
        let (mu_step, sigma_ratio) = grid_steps(spec);
        assert!(d[0].mean.abs() <= mu_step, "{:?}", d);
        assert!((d[0].sigma / 2.0).ln().abs() <= sigma_ratio.ln(), "{:?}", d);
        assert_eq!(d[0].weight, 1.0);
    }

    #[test]
    fn point_mass_is_degenerate() {
        let spec = HistogramSpec::new(-16, 16).unwrap();
        let p = Pmf::point(spec, 20);
        let fit = gmm_fit(&p, 1).unwrap();
        assert_eq!(fit.fitted[0].mean, spec.bin_center(20) as f64);
        assert_eq!(fit.fitted[0].sigma, SIGMA_MIN);
        let d = dequantize(&fit.codes, spec);
        assert_eq!(d[0].sigma, SIGMA_MIN);
    }

    #[test]
    fn narrow_component_concentrates() {
        let spec = HistogramSpec::new(-8, 8).unwrap();
        let p = gmm_reconstruct(&[GmmComponent { weight: 1.0, mean: 3.0, sigma: SIGMA_MIN }], spec).unwrap();
        assert!(p.at(12) >= 0.99);
    }

    #[test]
    fn half_bin_mean_is_symmetric() {
        let spec = HistogramSpec::new(-8, 8).unwrap();
        let p = gmm_reconstruct(&[GmmComponent { weight: 1.0, mean: 0.5, sigma: 3.0 }], spec).unwrap();
        for d in 0..7 {
            assert!((p.at(9 - d) - p.at(10 + d)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_after_dequantization() {
        let spec = HistogramSpec::low_rate();
        let comps = [
            GmmComponent { weight: 0.6, mean: -3.0, sigma: 1.0 },
            GmmComponent { weight: 0.6, mean: 2.0, sigma: 1.0 },
            GmmComponent { weight: 0.1, mean: 5.0, sigma: 1.0 },
        ];
        let d = dequantize(&quantize(&comps, spec), spec);
        let total: f64 = d.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(d.iter().all(|c| c.weight >= 0.0));
    }

    #[test]
    fn wire_layout_round_trip() {
        let codes = GmmCodes { weights: vec![10, 20], means: vec![1, 2, 3], sigmas: vec![4, 5, 6] };
        let mut bytes = Vec::new();
        codes.to_bytes(&mut bytes);
        assert_eq!(bytes, [10, 1, 4, 20, 2, 5, 3, 6]);
        assert_eq!(GmmCodes::from_bytes(&bytes, 3).unwrap(), codes);
        assert!(GmmCodes::from_bytes(&bytes[1..], 3).is_err());
        assert!(GmmCodes::from_bytes(&[200, 0, 0, 200, 0, 0, 0, 0], 3).is_err());
    }

    #[test]
    fn rejects_bad_component_count() {
        let p = Pmf::uniform(HistogramSpec::low_rate());
        assert!(gmm_fit(&p, 0).is_err());
        assert!(gmm_fit(&p, 4).is_err());
    }
}
