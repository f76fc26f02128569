use crate::error::{mismatch, Result};
use crate::support::{Pmf, PmfBank, EPS_P};

fn same_grid(p: &Pmf, q: &Pmf) -> Result<()> {
    if p.spec() != q.spec() {
        return Err(mismatch("pmfs live on different grids"));
    }
    Ok(())
}

/// `H(p)` in bits.
pub fn entropy_bits(p: &Pmf) -> f64 {
    p.mass().iter().filter(|&&m| m > 0.0).map(|&m| -m * m.log2()).sum()
}

/// `sum -p log2 q` with `q` read as at least `EPS_P`.
pub fn cross_entropy_bits(p: &Pmf, q: &Pmf) -> Result<f64> {
    same_grid(p, q)?;
    Ok(p.mass()
        .iter()
        .zip(q.mass())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| -a * b.max(EPS_P).log2())
        .sum())
}

/// `KL(p || q)` in bits with `q` read as at least `EPS_P`.
pub fn kl_bits(p: &Pmf, q: &Pmf) -> Result<f64> {
    same_grid(p, q)?;
    Ok(p.mass()
        .iter()
        .zip(q.mass())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.log2() - b.max(EPS_P).log2()))
        .sum())
}

fn bank_kl(bank: &PmfBank, default: &PmfBank) -> Result<f64> {
    bank.ensure_compatible(default)?;
    bank.pmfs().iter().zip(default.pmfs()).map(|(p, d)| kl_bits(p, d)).sum()
}

/// Largest achievable saving in bpp for one image:
/// `(1 / s^2) * sum_j KL(p_j || default_j)`.
pub fn potential_savings_bpp(bank: &PmfBank, default: &PmfBank, downscale: u32) -> Result<f64> {
    let s2 = (downscale as f64).powi(2);
    Ok(bank_kl(bank, default)? / s2)
}

/// Mean of [`potential_savings_bpp`] over a corpus.
pub fn mean_potential_savings_bpp(banks: &[PmfBank], default: &PmfBank, downscale: u32) -> Result<f64> {
    if banks.is_empty() {
        return Ok(0.0);
    }
    let total = banks
        .iter()
        .map(|b| potential_savings_bpp(b, default, downscale))
        .sum::<Result<f64>>()?;
    Ok(total / banks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::HistogramSpec;

    #[test]
    fn uniform_entropy() {
        let p = Pmf::uniform(HistogramSpec::high_rate());
        assert!((entropy_bits(&p) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_bin_kl() {
        let spec = HistogramSpec::new(0, 1).unwrap();
        let p = Pmf::new(spec, vec![0.75, 0.25]).unwrap();
        let q = Pmf::uniform(spec);
        let direct = 0.75 * (0.75f64 / 0.5).log2() + 0.25 * (0.25f64 / 0.5).log2();
        assert!((kl_bits(&p, &q).unwrap() - direct).abs() < 1e-15);
        assert!((kl_bits(&p, &q).unwrap() - 0.18872).abs() < 1e-5);
        assert_eq!(kl_bits(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn floor_bounds_kl() {
        let spec = HistogramSpec::new(0, 1).unwrap();
        let p = Pmf::point(spec, 1);
        let q = Pmf::point(spec, 2);
        assert!((kl_bits(&p, &q).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn savings_arithmetic() {
        let spec = HistogramSpec::new(0, 1).unwrap();
        let p = Pmf::new(spec, vec![0.75, 0.25]).unwrap();
        let bank = PmfBank::new(vec![p.clone()]).unwrap();
        let default = PmfBank::new(vec![Pmf::uniform(spec)]).unwrap();
        let kl = kl_bits(&p, &Pmf::uniform(spec)).unwrap();
        let bpp = potential_savings_bpp(&bank, &default, 16).unwrap();
        assert!((bpp - kl / 256.0).abs() < 1e-15);
        assert_eq!(potential_savings_bpp(&bank, &bank, 16).unwrap(), 0.0);
        assert!((0.256f64 / 256.0 - 0.001).abs() < 1e-15);
    }
}
