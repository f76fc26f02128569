//! Per-channel histogram estimation.
//!
//! Three estimators share one bin grid:
//!
//! * **hard**: each sample goes to its nearest bin (ties round half away
//!   from zero). This is exactly the normalized histogram of the quantized
//!   channel, i.e. the ideal encoding distribution for that channel.
//! * **soft**: each sample spreads unit mass over the two nearest bins with a
//!   triangular kernel of width one bin. Piecewise linear in the samples, so
//!   it has a usable gradient.
//! * **STE**: forward value of the hard histogram, gradient of the soft one.
//!
//! Soft-kernel mass that would fall outside the first or last bin is folded
//! into that edge bin, so every estimate sums to one. Kernel kinks (`u = 0`,
//! `|u| = 1`) get a zero derivative.
//!
//! The module also carries closed-form rate gradients used as independent
//! oracles by the autodiff tests.

use crate::error::{Error, Result};
use crate::support::{HistogramSpec, LatentTensor, Pmf, PmfBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistMode {
    Hard,
    Soft,
    Ste,
}

/// Histogram bank plus how it was produced.
#[derive(Debug, Clone)]
pub struct HistogramResult {
    pub bank: PmfBank,
    pub mode: HistMode,
    /// Samples per channel.
    pub source_count: usize,
}

/// Triangular kernel `max(0, 1 - |u|)`.
pub fn kernel_soft(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Rectangular kernel. The boundary `u = +0.5` belongs to the next bin up,
/// matching round-half-away-from-zero for non-negative values; the hard
/// histogram itself always goes through [`HistogramSpec::quantize`].
pub fn kernel_hard(u: f64) -> f64 {
    if (-0.5..0.5).contains(&u) {
        1.0
    } else {
        0.0
    }
}

/// Derivative of [`kernel_soft`] with zero at the kinks.
pub fn kernel_soft_deriv(u: f64) -> f64 {
    if u == 0.0 || u.abs() >= 1.0 {
        0.0
    } else if u > 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn check_nonempty(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        Err(Error::EmptyChannel)
    } else {
        Ok(())
    }
}

/// Nearest-bin histogram of one real-valued channel.
pub fn hard_histogram(y: &[f64], spec: HistogramSpec) -> Result<Pmf> {
    check_nonempty(y)?;
    Pmf::new(spec, hard_masses(y, spec))
}

pub(crate) fn hard_masses(y: &[f64], spec: HistogramSpec) -> Vec<f64> {
    let mut counts = vec![0u64; spec.num_bins()];
    for &v in y {
        let (q, _) = spec.quantize(v);
        counts[(q - spec.y_min()) as usize] += 1;
    }
    normalize_counts(&counts, y.len())
}

fn normalize_counts(counts: &[u64], n: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Histogram of an already-quantized channel.
pub fn count_histogram(values: &[i32], spec: HistogramSpec) -> Result<Pmf> {
    if values.is_empty() {
        return Err(Error::EmptyChannel);
    }
    let mut counts = vec![0u64; spec.num_bins()];
    for &v in values {
        counts[spec.bin_offset(v as i64)?] += 1;
    }
    Pmf::new(spec, normalize_counts(&counts, values.len()))
}

/// The true (hard) distribution of every channel of a latent.
pub fn latent_histograms(latent: &LatentTensor) -> Result<PmfBank> {
    let spec = latent.spec();
    let pmfs = (0..latent.channels())
        .map(|c| count_histogram(latent.channel(c), spec))
        .collect::<Result<Vec<_>>>()?;
    PmfBank::new(pmfs)
}

/// Position of a sample on the grid, clamped to the edge bin centers, as
/// `(left offset, fraction toward the right neighbour)`.
fn soft_position(v: f64, spec: HistogramSpec) -> (usize, f64) {
    let last = (spec.num_bins() - 1) as f64;
    let t = (v - spec.y_min() as f64).clamp(0.0, last);
    let lo = t.floor();
    (lo as usize, t - lo)
}

/// Triangular-kernel histogram of one channel.
pub fn soft_histogram(y: &[f64], spec: HistogramSpec) -> Result<Pmf> {
    check_nonempty(y)?;
    Ok(renormalized(spec, soft_masses(y, spec)))
}

pub(crate) fn soft_masses(y: &[f64], spec: HistogramSpec) -> Vec<f64> {
    let b = spec.num_bins();
    let mut mass = vec![0.0; b];
    let inv = 1.0 / y.len() as f64;
    for &v in y {
        let (lo, frac) = soft_position(v, spec);
        mass[lo] += (1.0 - frac) * inv;
        if frac > 0.0 {
            mass[lo + 1] += frac * inv;
        }
    }
    mass
}

// Summation order can leave the total a few ulps off one; the result is still
// well within MASS_TOL, this only guards the constructor.
fn renormalized(spec: HistogramSpec, mass: Vec<f64>) -> Pmf {
    Pmf::new(spec, mass).expect("soft histogram conserves mass")
}

/// STE forward value: identical to [`hard_histogram`].
pub fn ste_histogram(y: &[f64], spec: HistogramSpec) -> Result<Pmf> {
    hard_histogram(y, spec)
}

/// Gradient of `sum_i upstream[i] * soft_histogram(y)[i]` with respect to
/// each `y_k`. Also the backward rule of [`ste_histogram`].
pub fn soft_histogram_grad(y: &[f64], spec: HistogramSpec, upstream: &[f64]) -> Result<Vec<f64>> {
    check_nonempty(y)?;
    if upstream.len() != spec.num_bins() {
        return Err(Error::SpecMismatch(format!(
            "upstream has {} entries, spec has {} bins",
            upstream.len(),
            spec.num_bins()
        )));
    }
    let inv = 1.0 / (y.len() as f64 * spec.bin_width());
    Ok(y.iter().map(|&v| sample_grad(v, spec, upstream) * inv).collect())
}

/// `d/dv sum_i upstream[i] K((v - b_i)/db)` for one sample, before the 1/N.
fn sample_grad(v: f64, spec: HistogramSpec, upstream: &[f64]) -> f64 {
    let b = spec.num_bins();
    let t = v - spec.y_min() as f64;
    // Outside the outer bin centers the folded mass sits entirely in an edge bin.
    if !(t > 0.0 && t < (b - 1) as f64) {
        return 0.0;
    }
    let lo = t.floor() as usize;
    let mut g = 0.0;
    for i in lo..=(lo + 1).min(b - 1) {
        g += upstream[i] * kernel_soft_deriv(t - i as f64);
    }
    g
}

/// Soft histogram of every row of a channel-major `channels x n` buffer.
pub fn soft_histogram_rows(y: &[f64], channels: usize, spec: HistogramSpec) -> Result<HistogramResult> {
    rows(y, channels, spec, HistMode::Soft)
}

/// Hard histogram of every row of a channel-major `channels x n` buffer.
pub fn hard_histogram_rows(y: &[f64], channels: usize, spec: HistogramSpec) -> Result<HistogramResult> {
    rows(y, channels, spec, HistMode::Hard)
}

fn rows(y: &[f64], channels: usize, spec: HistogramSpec, mode: HistMode) -> Result<HistogramResult> {
    if channels == 0 || y.len() % channels != 0 {
        return Err(Error::BadShape(format!("{} values over {channels} channels", y.len())));
    }
    let n = y.len() / channels;
    let pmfs = y
        .chunks(n.max(1))
        .take(channels)
        .map(|row| match mode {
            HistMode::Soft => soft_histogram(row, spec),
            HistMode::Hard | HistMode::Ste => hard_histogram(row, spec),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HistogramResult {
        bank: PmfBank::new(pmfs)?,
        mode,
        source_count: n,
    })
}

// Closed-form rate gradients.

/// `(floor, ceil)` 1-based bins straddling `y`, each `offset(y) + 1`.
pub fn straddling_bins(y: f64, spec: HistogramSpec) -> (usize, usize) {
    let t = y - spec.y_min() as f64;
    (t.floor() as usize + 1, t.ceil() as usize + 1)
}

/// Gradient of the latent rate with respect to one latent element when the
/// reconstructed distribution is held at the true one:
/// `-(1/db) * (log p_hat[ceil] - log p_hat[floor])`.
///
/// `log_phat` holds log-probabilities in whatever base the rate is measured
/// in. `y` must lie within the outer bin centers.
pub fn interpolated_rate_grad(y: f64, log_phat: &[f64], spec: HistogramSpec) -> f64 {
    let (lo, hi) = straddling_bins(y, spec);
    -(log_phat[hi - 1] - log_phat[lo - 1]) / spec.bin_width()
}

/// Expected code length of one element at real position `y`: a linear
/// interpolation between the code lengths of the two nearest bins, weighted
/// by the triangular kernel (`1 - a` on the left bin, `a` on the right, with
/// `a` the distance from the left center in bins).
pub fn interpolated_code_length(y: f64, log_phat: &[f64], spec: HistogramSpec) -> f64 {
    let (lo, hi) = straddling_bins(y, spec);
    let a = (y - spec.bin_center(lo) as f64) / spec.bin_width();
    -(1.0 - a) * log_phat[lo - 1] - a * log_phat[hi - 1]
}

/// A continuous density with a closed-form CDF, as used by a factorized
/// entropy bottleneck where `p(y) = c(y + 1/2) - c(y - 1/2)`.
pub trait BinDensity {
    fn cdf(&self, y: f64) -> f64;
    fn pdf(&self, y: f64) -> f64;

    /// Probability of the unit bin centered at `y`.
    fn bin_prob(&self, y: f64) -> f64 {
        self.cdf(y + 0.5) - self.cdf(y - 0.5)
    }

    /// Code length `-ln p(y)` in nats.
    fn code_length(&self, y: f64) -> f64 {
        -self.bin_prob(y).ln()
    }

    /// `d/dy -ln p(y) = -(f(y + 1/2) - f(y - 1/2)) / p(y)`.
    fn code_length_grad(&self, y: f64) -> f64 {
        -(self.pdf(y + 0.5) - self.pdf(y - 0.5)) / self.bin_prob(y)
    }
}

/// Logistic distribution.
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    pub loc: f64,
    pub scale: f64,
}

impl BinDensity for Logistic {
    fn cdf(&self, y: f64) -> f64 {
        1.0 / (1.0 + (-(y - self.loc) / self.scale).exp())
    }

    fn pdf(&self, y: f64) -> f64 {
        let c = self.cdf(y);
        c * (1.0 - c) / self.scale
    }

    /// Upper-tail bins are differenced on the survival function to avoid
    /// cancellation near `cdf = 1`.
    fn bin_prob(&self, y: f64) -> f64 {
        if y > self.loc {
            let sf = |v: f64| 1.0 / (1.0 + ((v - self.loc) / self.scale).exp());
            sf(y - 0.5) - sf(y + 0.5)
        } else {
            self.cdf(y + 0.5) - self.cdf(y - 0.5)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn spec8() -> HistogramSpec {
        // B = 8, centers 0..=7
        HistogramSpec::new(0, 7).unwrap()
    }

    fn b(i: usize) -> f64 {
        spec8().bin_center(i) as f64
    }

    #[test]
    fn kernels() {
        assert_eq!(kernel_soft(0.0), 1.0);
        assert_eq!(kernel_soft(0.5), 0.5);
        assert_eq!(kernel_soft(-1.5), 0.0);
        assert_eq!(kernel_hard(0.49), 1.0);
        assert_eq!(kernel_hard(0.51), 0.0);
        assert_eq!(kernel_hard(0.5), 0.0);
        assert_eq!(kernel_hard(-0.5), 1.0);
    }

    #[test]
    fn hard_counting_examples() {
        let p = hard_histogram(&[b(3), b(3), b(5)], spec8()).unwrap();
        let want = [0.0, 0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0, 0.0, 0.0];
        for (a, w) in p.mass().iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
        let p = hard_histogram(&[b(1); 5], spec8()).unwrap();
        assert_eq!(p, Pmf::point(spec8(), 1));
        assert!(matches!(hard_histogram(&[], spec8()), Err(Error::EmptyChannel)));
        assert!(matches!(soft_histogram(&[], spec8()), Err(Error::EmptyChannel)));
    }

    /// Nearest bin by explicit distance comparison, ties away from zero.
    fn nearest_bin_oracle(v: f64, spec: HistogramSpec) -> usize {
        let mut best = 1;
        let mut best_d = f64::INFINITY;
        for i in 1..=spec.num_bins() {
            let c = spec.bin_center(i) as f64;
            let d = (v - c).abs();
            let tie_wins = d == best_d && c.abs() > (spec.bin_center(best) as f64).abs();
            if d < best_d || tie_wins {
                best = i;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn hard_matches_nearest_bin_on_half_integers() {
        let spec = HistogramSpec::new(-6, 6).unwrap();
        let ys: Vec<f64> = (-13..=12).map(|k| k as f64 + 0.5).collect();
        let p = hard_histogram(&ys, spec).unwrap();
        let mut counts = vec![0.0; spec.num_bins()];
        for &v in &ys {
            counts[nearest_bin_oracle(v, spec) - 1] += 1.0;
        }
        for (a, c) in p.mass().iter().zip(&counts) {
            assert_eq!(*a, c / ys.len() as f64);
        }
    }

    #[test]
    fn hard_matches_counting_loop_on_gaussian_samples() {
        let spec = HistogramSpec::new(-16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 3.0).unwrap();
        let ys: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let p = hard_histogram(&ys, spec).unwrap();
        let mut counts = vec![0usize; spec.num_bins()];
        for &v in &ys {
            let r = v.round().clamp(-16.0, 16.0) as i64;
            counts[(r + 16) as usize] += 1;
        }
        for (a, &c) in p.mass().iter().zip(&counts) {
            assert_eq!(*a, c as f64 / 10_000.0);
        }
    }

    #[test]
    fn soft_examples() {
        let p = soft_histogram(&[b(3)], spec8()).unwrap();
        assert_eq!(p, Pmf::point(spec8(), 3));
        let p = soft_histogram(&[b(3) + 0.25], spec8()).unwrap();
        assert!((p.at(3) - 0.75).abs() < 1e-15);
        assert!((p.at(4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn soft_uniform_between_two_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ys: Vec<f64> = (0..1_000_000).map(|_| rng.random_range(b(2)..b(3))).collect();
        let p = soft_histogram(&ys, spec8()).unwrap();
        // Uniform on [b2, b3]: E[1 - a] = 0.5 to bin 2, E[a] = 0.5 to bin 3.
        // Bins 2..4 get (0.5, 0.5, 0) for this support.
        assert!((p.at(2) - 0.5).abs() < 1e-2);
        assert!((p.at(3) - 0.5).abs() < 1e-2);
        assert!(p.at(4).abs() < 1e-12);
    }

    #[test]
    fn soft_uniform_over_unit_bin() {
        // Uniform over the bin [b3 - 1/2, b3 + 1/2]: 1/8 leaks to each neighbour.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ys: Vec<f64> = (0..1_000_000)
            .map(|_| rng.random_range(b(3) - 0.5..b(3) + 0.5))
            .collect();
        let p = soft_histogram(&ys, spec8()).unwrap();
        assert!((p.at(2) - 0.125).abs() < 1e-2);
        assert!((p.at(3) - 0.75).abs() < 1e-2);
        assert!((p.at(4) - 0.125).abs() < 1e-2);
    }

    #[test]
    fn edge_leakage_is_folded() {
        let p = soft_histogram(&[-0.4, 7.3], spec8()).unwrap();
        assert_eq!(p.at(1), 0.5);
        assert_eq!(p.at(8), 0.5);
        let total: f64 = p.mass().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ste_forward_is_hard() {
        let ys = [0.0, 1.0, 1.0, 5.0, 7.0];
        assert_eq!(ste_histogram(&ys, spec8()).unwrap(), hard_histogram(&ys, spec8()).unwrap());
        let ys = [0.2, 1.7, 2.5, 5.49];
        assert_eq!(ste_histogram(&ys, spec8()).unwrap(), hard_histogram(&ys, spec8()).unwrap());
    }

    fn linear_functional(y: &[f64], c: &[f64]) -> f64 {
        let p = soft_histogram(y, spec8()).unwrap();
        p.mass().iter().zip(c).map(|(m, c)| m * c).sum()
    }

    #[test]
    fn grad_matches_finite_differences() {
        let c = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, 0.9];
        let y = vec![2.3, 4.71, 1.5, 5.02, 3.333];
        let g = soft_histogram_grad(&y, spec8(), &c).unwrap();
        let h = 1e-4;
        for k in 0..y.len() {
            let mut up = y.clone();
            let mut dn = y.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (linear_functional(&up, &c) - linear_functional(&dn, &c)) / (2.0 * h);
            let rel = (g[k] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-5, "k={k}: {} vs {fd}", g[k]);
            // (c_right - c_left) / N
            let lo = y[k].floor() as usize;
            let expect = (c[lo + 1] - c[lo]) / y.len() as f64;
            assert!((g[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_at_bin_center_uses_zero_subgradient() {
        let c = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, 0.9];
        let y = vec![3.0];
        assert_eq!(soft_histogram_grad(&y, spec8(), &c).unwrap()[0], 0.0);
        // One-sided differences recover the derivatives of the adjacent
        // linear pieces, which the analytic gradient reproduces just off the kink.
        let h = 1e-6;
        let f0 = linear_functional(&y, &c);
        let right = (linear_functional(&[3.0 + h], &c) - f0) / h;
        let left = (f0 - linear_functional(&[3.0 - h], &c)) / h;
        let g_right = soft_histogram_grad(&[3.0 + 1e-3], spec8(), &c).unwrap()[0];
        let g_left = soft_histogram_grad(&[3.0 - 1e-3], spec8(), &c).unwrap()[0];
        assert!((right - g_right).abs() < 1e-6);
        assert!((left - g_left).abs() < 1e-6);
        assert!((right - (c[4] - c[3])).abs() < 1e-6);
        assert!((left - (c[3] - c[2])).abs() < 1e-6);
    }

    #[test]
    fn grad_examples() {
        let n = 4;
        let mut y = vec![6.0; n];
        y[0] = b(3) + 0.5;
        let mut e3 = vec![0.0; 8];
        e3[2] = 1.0;
        let g = soft_histogram_grad(&y, spec8(), &e3).unwrap();
        assert!((g[0] - (-1.0 / n as f64)).abs() < 1e-15);
        // Farther than one bin from bin 3.
        assert_eq!(g[1], 0.0);
        // Mass conservation: all-ones upstream gives zero.
        let ones = vec![1.0; 8];
        let g = soft_histogram_grad(&[1.3, 2.9, 4.5, 6.1], spec8(), &ones).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut y: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..8.0)).collect();
        let a_soft = soft_histogram(&y, spec8()).unwrap();
        let a_hard = hard_histogram(&y, spec8()).unwrap();
        y.reverse();
        y.swap(3, 40);
        let b_soft = soft_histogram(&y, spec8()).unwrap();
        for (a, b) in a_soft.mass().iter().zip(b_soft.mass()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(a_hard, hard_histogram(&y, spec8()).unwrap());
    }

    #[test]
    fn interpolated_code_length_derivative_matches_grad() {
        let log_p = [-3.0, -2.0, -1.2, -0.9, -1.5, -2.5, -4.0, -6.0];
        for &y in &[0.3, 1.7, 2.25, 5.9, 6.5] {
            let h = 1e-6;
            let fd = (interpolated_code_length(y + h, &log_p, spec8())
                - interpolated_code_length(y - h, &log_p, spec8()))
                / (2.0 * h);
            let g = interpolated_rate_grad(y, &log_p, spec8());
            assert!((fd - g).abs() < 1e-8, "y={y}: {fd} vs {g}");
        }
    }

    #[test]
    fn logistic_bottleneck_grad() {
        let d = Logistic { loc: 0.4, scale: 1.7 };
        for &y in &[-5.0, -2.0, -1.0, 1.5, 3.0, 6.0] {
            let h = 1e-5;
            let fd = (d.code_length(y + h) - d.code_length(y - h)) / (2.0 * h);
            let g = d.code_length_grad(y);
            assert!(((fd - g) / g).abs() < 1e-6, "y={y}: {fd} vs {g}");
        }
    }
}
