use crate::error::{Error, Result};
use crate::support::Pmf;

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Integer frequencies summing to `2^16`, every bin at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
}

impl FreqTable {
    /// Takes ownership of already-valid frequencies.
    pub fn from_freqs(freqs: Vec<u32>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::InvalidArgument("empty frequency table".into()));
        }
        if freqs.len() > TOTAL as usize {
            return Err(Error::TooManyBins { bins: freqs.len(), max: TOTAL as usize });
        }
        if freqs.iter().any(|&f| f == 0) {
            return Err(Error::InvalidArgument("zero frequency".into()));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &f in &freqs {
            acc += f as u64;
            if acc > TOTAL as u64 {
                break;
            }
            cumulative.push(acc as u32);
        }
        if acc != TOTAL as u64 {
            return Err(Error::InvalidArgument(format!("frequencies sum to {acc}, not {TOTAL}")));
        }
        Ok(Self { freqs, cumulative })
    }

    pub fn num_bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn freq(&self, offset: usize) -> u32 {
        self.freqs[offset]
    }

    /// Start of the 0-based bin `offset` in the cumulative table.
    pub fn start(&self, offset: usize) -> u32 {
        self.cumulative[offset]
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// Bin whose interval holds `slot` (`slot < 2^16`).
    pub fn lookup(&self, slot: u32) -> usize {
        // Largest i with cumulative[i] <= slot.
        self.cumulative.partition_point(|&c| c <= slot) - 1
    }

    /// Code length in bits of the 0-based bin `offset`.
    pub fn code_length(&self, offset: usize) -> f64 {
        PRECISION as f64 - (self.freqs[offset] as f64).log2()
    }
}

/// Largest-remainder quantization of `p * 2^16` with at least 1 per bin.
/// Ties go to the lower index.
pub fn quantize_pmf(p: &Pmf) -> Result<FreqTable> {
    quantize_masses(p.mass())
}

pub(crate) fn quantize_masses(mass: &[f64]) -> Result<FreqTable> {
    let b = mass.len();
    if b > TOTAL as usize {
        return Err(Error::TooManyBins { bins: b, max: TOTAL as usize });
    }
    if b == 0 {
        return Err(Error::InvalidArgument("empty pmf".into()));
    }
    let total = TOTAL as f64;
    let targets: Vec<f64> = mass.iter().map(|&m| m.max(0.0) * total).collect();
    let mut freqs: Vec<u32> = targets.iter().map(|&t| (t.floor() as u32).max(1)).collect();
    let sum: i64 = freqs.iter().map(|&f| f as i64).sum();
    let mut diff = TOTAL as i64 - sum;

    if diff > 0 {
        // Hand out the shortfall by largest remainder.
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| {
            let ri = targets[i] - freqs[i] as f64;
            let rj = targets[j] - freqs[j] as f64;
            rj.total_cmp(&ri).then(i.cmp(&j))
        });
        let mut k = 0;
        while diff > 0 {
            freqs[order[k % b]] += 1;
            diff -= 1;
            k += 1;
        }
    }
    while diff < 0 {
        // Take back the excess from the most over-allocated bins that can spare it.
        let mut order: Vec<usize> = (0..b).filter(|&i| freqs[i] > 1).collect();
        if order.is_empty() {
            return Err(Error::TooManyBins { bins: b, max: TOTAL as usize });
        }
        order.sort_by(|&i, &j| {
            let oi = freqs[i] as f64 - targets[i];
            let oj = freqs[j] as f64 - targets[j];
            oj.total_cmp(&oi).then(i.cmp(&j))
        });
        for i in order {
            if diff == 0 {
                break;
            }
            freqs[i] -= 1;
            diff += 1;
        }
    }
    FreqTable::from_freqs(freqs)
}
