use crate::error::{mismatch, Error, Result};
use crate::support::{HistogramSpec, Pmf, PmfBank, EPS_P};

/// The amortized baseline: one fixed pmf per channel, no side information.
///
/// Masses are kept as f32, the precision of model files, so a model behaves
/// identically before and after a save/load cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticModel {
    weights: Vec<f32>,
    default_bank: PmfBank,
}

impl StaticModel {
    pub fn from_bank(bank: &PmfBank) -> Result<Self> {
        let weights: Vec<f32> = bank.to_flat().into_iter().map(|v| v as f32).collect();
        Self::from_f32(bank.spec(), bank.channels(), weights)
    }

    /// Builds the model from `channels x bins` stored masses.
    pub fn from_f32(spec: HistogramSpec, channels: usize, weights: Vec<f32>) -> Result<Self> {
        let b = spec.num_bins();
        if channels == 0 || weights.len() != channels * b {
            return Err(Error::BadShape(format!("{} masses for {channels} channels of {b} bins", weights.len())));
        }
        let pmfs = weights
            .chunks(b)
            .map(|row| {
                let w: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                Pmf::from_weights(spec, &w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights, default_bank: PmfBank::new(pmfs)? })
    }

    pub fn default_bank(&self) -> &PmfBank {
        &self.default_bank
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn spec(&self) -> HistogramSpec {
        self.default_bank.spec()
    }

    pub fn channels(&self) -> usize {
        self.default_bank.channels()
    }

    /// The pmfs the coder actually uses: the defaults floored at `EPS_P`.
    pub fn coding_bank(&self) -> PmfBank {
        self.default_bank.floored(EPS_P)
    }
}

/// Channel-wise arithmetic mean of the banks, the static pmf with the lowest
/// expected cross-entropy over them.
pub fn mean_bank(banks: &[PmfBank]) -> Result<PmfBank> {
    let first = banks.first().ok_or_else(|| Error::InvalidArgument("no banks to average".into()))?;
    for b in banks {
        if b.spec() != first.spec() || b.channels() != first.channels() {
            return Err(mismatch("banks to average must share spec and channel count"));
        }
    }
    let n = banks.len() as f64;
    let pmfs = (0..first.channels())
        .map(|c| {
            let mut acc = vec![0.0; first.spec().num_bins()];
            for bank in banks {
                for (a, m) in acc.iter_mut().zip(bank.get(c).mass()) {
                    *a += m;
                }
            }
            Pmf::from_weights(first.spec(), &acc.iter().map(|a| a / n).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    PmfBank::new(pmfs)
}

pub fn static_fit(banks: &[PmfBank]) -> Result<StaticModel> {
    StaticModel::from_bank(&mean_bank(banks)?)
}
