use crate::coder::{quantize_masses, FreqTable, RansDecoder, RansEncoder};
use crate::error::{corrupt, mismatch, Result};
use crate::nn::{round_q, DistNet, Tensor, Q_MAX, Q_MIN};
use crate::support::{HistogramSpec, Pmf, PmfBank};

/// The learned distribution compressor bound to a latent histogram spec.
///
/// Weights are rounded to f32 on construction so the in-memory model and a
/// reloaded model file reconstruct identical pmfs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    spec: HistogramSpec,
    net: DistNet,
}

impl LearnedModel {
    pub fn new(spec: HistogramSpec, mut net: DistNet) -> Result<Self> {
        if net.config().bins != spec.num_bins() {
            return Err(mismatch(format!(
                "network expects {} bins, spec has {}",
                net.config().bins,
                spec.num_bins()
            )));
        }
        net.round_to_f32();
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> HistogramSpec {
        self.spec
    }

    pub fn net(&self) -> &DistNet {
        &self.net
    }

    pub fn channels(&self) -> usize {
        self.net.config().channels
    }

    fn q_tables(&self) -> Result<Vec<FreqTable>> {
        let probs = self.net.q_pmfs();
        (0..probs.rows()).map(|r| quantize_masses(probs.row(r))).collect()
    }

    fn reconstruct(&self, q_hat: &Tensor) -> Result<PmfBank> {
        let phat = self.net.synthesize(q_hat)?;
        let pmfs = (0..phat.rows())
            .map(|r| Pmf::from_weights(self.spec, phat.row(r)))
            .collect::<Result<Vec<_>>>()?;
        PmfBank::new(pmfs)
    }

    /// Integer compressor latent for `bank`.
    pub fn latent(&self, bank: &PmfBank) -> Result<Tensor> {
        if bank.spec() != self.spec || bank.channels() != self.channels() {
            return Err(mismatch(format!(
                "bank is {}x{} on [{}, {}], model expects {}x{} on [{}, {}]",
                bank.channels(),
                bank.spec().num_bins(),
                bank.spec().y_min(),
                bank.spec().y_max(),
                self.channels(),
                self.spec.num_bins(),
                self.spec.y_min(),
                self.spec.y_max()
            )));
        }
        let p = Tensor::from_vec(bank.channels(), self.spec.num_bins(), bank.to_flat())?;
        Ok(round_q(&self.net.analyze(&p)?))
    }
}

/// Codes the compressor latent of `bank`; returns the side bytes and the
/// reconstructed pmfs the decoder will also obtain.
pub fn learned_encode(bank: &PmfBank, model: &LearnedModel) -> Result<(Vec<u8>, PmfBank)> {
    let q_hat = model.latent(bank)?;
    let tables = model.q_tables()?;
    let mut enc = RansEncoder::new();
    for (r, table) in tables.iter().enumerate() {
        for &v in q_hat.row(r) {
            enc.put(table, (v as i32 - Q_MIN) as usize);
        }
    }
    let phat = model.reconstruct(&q_hat)?;
    Ok((enc.finish(), phat))
}

pub fn learned_decode(side: &[u8], model: &LearnedModel) -> Result<PmfBank> {
    let cfg = model.net.config();
    let (m, l) = (cfg.m_q, cfg.latent_len());
    let tables = model.q_tables()?;
    let mut dec = RansDecoder::new(side)?;
    let mut q = Vec::with_capacity(m * l);
    for table in &tables {
        for _ in 0..l {
            let v = Q_MIN + dec.get(table)? as i32;
            if v > Q_MAX {
                return Err(corrupt("compressor latent out of range"));
            }
            q.push(v as f64);
        }
    }
    dec.finish()?;
    model.reconstruct(&Tensor::from_vec(m, l, q)?)
}
