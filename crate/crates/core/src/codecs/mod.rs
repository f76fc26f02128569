//! Encoding-distribution back-ends and the compress/decompress pipeline.
//!
//! A stream carries the back-end's side information followed by one rANS
//! payload holding every latent channel in channel-major order, each coded
//! with its own frequency table.

mod gmm;
mod learned;
mod model_file;
mod static_model;

pub use gmm::{
    dequantize as gmm_dequantize, dequantize_mean, dequantize_sigma, fit_mixture, gmm_fit, gmm_reconstruct, gmm_side_bits, grid_steps,
    mixture_masses,
    quantize as gmm_quantize, quantize_mean, quantize_sigma, sigma_max, GmmCodes, GmmComponent, GmmModel, GmmParams, MAX_COMPONENTS,
    SIGMA_MIN,
};
pub use learned::{learned_decode, learned_encode, LearnedModel};
pub use model_file::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use static_model::{mean_bank, static_fit, StaticModel};

use crate::coder::{quantize_pmf, CodecTag, CodedStream, FreqTable, RansDecoder, RansEncoder, StreamHeader, STREAM_VERSION};
use crate::error::{corrupt, mismatch, Result};
use crate::histogram::latent_histograms;
use crate::support::{HistogramSpec, LatentTensor, PmfBank};

/// Any of the three back-ends.
#[derive(Debug, Clone, PartialEq)]
pub enum DistModel {
    Static(StaticModel),
    Gmm(GmmModel),
    Learned(LearnedModel),
}

impl DistModel {
    pub fn tag(&self) -> CodecTag {
        match self {
            DistModel::Static(_) => CodecTag::Static,
            DistModel::Gmm(_) => CodecTag::Gmm,
            DistModel::Learned(_) => CodecTag::Learned,
        }
    }

    pub fn spec(&self) -> HistogramSpec {
        match self {
            DistModel::Static(m) => m.spec(),
            DistModel::Gmm(m) => m.spec,
            DistModel::Learned(m) => m.spec(),
        }
    }

    /// Channel count the model is bound to, if any.
    pub fn channels(&self) -> Option<usize> {
        match self {
            DistModel::Static(m) => Some(m.channels()),
            DistModel::Gmm(_) => None,
            DistModel::Learned(m) => Some(m.channels()),
        }
    }

    fn check(&self, spec: HistogramSpec, channels: usize) -> Result<()> {
        if spec != self.spec() {
            return Err(mismatch(format!(
                "latent support [{}, {}] differs from model support [{}, {}]",
                spec.y_min(),
                spec.y_max(),
                self.spec().y_min(),
                self.spec().y_max()
            )));
        }
        if let Some(c) = self.channels() {
            if c != channels {
                return Err(mismatch(format!("latent has {channels} channels, model expects {c}")));
            }
        }
        Ok(())
    }

    /// Side information for `bank` and the pmfs to code the latent with.
    pub fn encode_distributions(&self, bank: &PmfBank) -> Result<(Vec<u8>, PmfBank)> {
        self.check(bank.spec(), bank.channels())?;
        match self {
            DistModel::Static(m) => Ok((Vec::new(), m.coding_bank())),
            DistModel::Gmm(m) => {
                let mut side = Vec::with_capacity((3 * m.components - 1) * bank.channels());
                let mut pmfs = Vec::with_capacity(bank.channels());
                for p in bank.pmfs() {
                    let fit = gmm_fit(p, m.components)?;
                    fit.codes.to_bytes(&mut side);
                    pmfs.push(gmm_reconstruct(&gmm_dequantize(&fit.codes, m.spec), m.spec)?);
                }
                Ok((side, PmfBank::new(pmfs)?))
            }
            DistModel::Learned(m) => learned_encode(bank, m),
        }
    }

    /// Inverse of [`DistModel::encode_distributions`] on the decoder side.
    pub fn decode_distributions(&self, side: &[u8], spec: HistogramSpec, channels: usize) -> Result<PmfBank> {
        self.check(spec, channels)?;
        match self {
            DistModel::Static(m) => {
                if !side.is_empty() {
                    return Err(corrupt("static stream carries side information"));
                }
                Ok(m.coding_bank())
            }
            DistModel::Gmm(m) => {
                let per = 3 * m.components - 1;
                if side.len() != per * channels {
                    return Err(corrupt(format!("{} side bytes for {channels} mixtures of {per} bytes", side.len())));
                }
                let pmfs = side
                    .chunks(per)
                    .map(|chunk| {
                        let codes = GmmCodes::from_bytes(chunk, m.components)?;
                        gmm_reconstruct(&gmm_dequantize(&codes, spec), spec)
                    })
                    .collect::<Result<Vec<_>>>()?;
                PmfBank::new(pmfs)
            }
            DistModel::Learned(m) => learned_decode(side, m),
        }
    }
}

fn tables(bank: &PmfBank) -> Result<Vec<FreqTable>> {
    bank.pmfs().iter().map(quantize_pmf).collect()
}

/// Codes `latent` with per-channel distributions chosen by `model`.
pub fn codec_compress(latent: &LatentTensor, model: &DistModel) -> Result<CodedStream> {
    let bank = latent_histograms(latent)?;
    let (side_info, coding) = model.encode_distributions(&bank)?;
    let spec = latent.spec();
    let mut enc = RansEncoder::new();
    for (c, table) in tables(&coding)?.iter().enumerate() {
        crate::coder::push_channel(&mut enc, latent.channel(c), spec, table)?;
    }
    Ok(CodedStream {
        header: StreamHeader {
            version: STREAM_VERSION,
            codec: model.tag(),
            spec,
            channels: latent.channels() as u32,
            height: latent.height() as u32,
            width: latent.width() as u32,
            downscale: latent.downscale(),
        },
        side_info,
        latent_payload: enc.finish(),
    })
}

pub fn codec_decompress(stream: &CodedStream, model: &DistModel) -> Result<LatentTensor> {
    let h = &stream.header;
    if h.codec != model.tag() {
        return Err(mismatch(format!("stream was coded with {}, model is {}", h.codec.name(), model.tag().name())));
    }
    let (c, hgt, wid) = (h.channels as usize, h.height as usize, h.width as usize);
    let n = hgt.checked_mul(wid).ok_or_else(|| corrupt("latent dimensions overflow"))?;
    if c == 0 || n == 0 {
        return Err(corrupt("stream declares an empty latent"));
    }
    let coding = model.decode_distributions(&stream.side_info, h.spec, c)?;
    let mut dec = RansDecoder::new(&stream.latent_payload)?;
    let mut data = Vec::with_capacity(c.saturating_mul(n).min(1 << 28));
    for table in tables(&coding)? {
        data.extend(crate::coder::pull_channel(&mut dec, h.spec, &table, n)?);
    }
    dec.finish()?;
    LatentTensor::new(c, hgt, wid, h.downscale, h.spec, data)
}
