//! `DCM1` model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DCM1" | u8 version | u8 codec tag | i32 y_min | i32 y_max
//!        | u32 hyper_len | hyperparameters
//!        | u32 tensor count | manifest entries | u32 blob_len | f32 blob
//! ```
//!
//! Hyperparameters are `u32 C` for the static model, `u8 K_g` for the
//! mixture model and `u32 C, N_q, M_q, K, G, B` for the learned model. Each
//! manifest entry is `u16 name_len | name | u32 rows | u32 cols | u64 offset`
//! with the offset in bytes from the start of the blob.

use super::{DistModel, GmmModel, LearnedModel, StaticModel};
use crate::coder::CodecTag;
use crate::error::{corrupt, Result};
use crate::nn::{DistNet, Param, Tensor, TransformConfig};
use crate::support::HistogramSpec;
use crate::wire::{Reader, Writer};

pub const MODEL_MAGIC: &[u8; 4] = b"DCM1";
pub const MODEL_VERSION: u8 = 1;

struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

pub fn write_model(model: &DistModel) -> Vec<u8> {
    let spec = model.spec();
    let mut hyper = Writer::new();
    let mut entries = Vec::new();
    match model {
        DistModel::Static(m) => {
            hyper.u32(m.channels() as u32);
            entries.push(Entry {
                name: "default".into(),
                rows: m.channels(),
                cols: spec.num_bins(),
                values: m.weights().to_vec(),
            });
        }
        DistModel::Gmm(m) => hyper.u8(m.components as u8),
        DistModel::Learned(m) => {
            let c = m.net().config();
            for v in [c.channels, c.n_q, c.m_q, c.kernel, c.groups, c.bins] {
                hyper.u32(v as u32);
            }
            for p in m.net().params() {
                entries.push(Entry {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.data().iter().map(|&v| v as f32).collect(),
                });
            }
        }
    }

    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u8(MODEL_VERSION);
    w.u8(model.tag() as u8);
    w.i32(spec.y_min());
    w.i32(spec.y_max());
    w.section(&hyper.finish());
    w.u32(entries.len() as u32);
    let mut offset = 0u64;
    for e in &entries {
        w.name(&e.name);
        w.u32(e.rows as u32);
        w.u32(e.cols as u32);
        w.u64(offset);
        offset += 4 * e.values.len() as u64;
    }
    let mut blob = Writer::new();
    for e in &entries {
        for &v in &e.values {
            blob.f32(v);
        }
    }
    w.section(&blob.finish());
    w.finish()
}

fn to_usize(v: u32) -> usize {
    v as usize
}

pub fn read_model(bytes: &[u8]) -> Result<DistModel> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u8()?;
    if version != MODEL_VERSION {
        return Err(corrupt(format!("unsupported model version {version}")));
    }
    let tag = CodecTag::from_u8(r.u8()?)?;
    let spec = HistogramSpec::new(r.i32()?, r.i32()?).map_err(|e| corrupt(e.to_string()))?;
    let hyper_bytes = r.section()?;
    let count = to_usize(r.u32()?);
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.name()?;
        let rows = to_usize(r.u32()?);
        let cols = to_usize(r.u32()?);
        let offset = r.u64()?;
        manifest.push((name, rows, cols, offset));
    }
    let blob = r.section()?;
    r.finish()?;

    let mut expected = 0u64;
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, rows, cols, offset) in manifest {
        if offset != expected {
            return Err(corrupt(format!("tensor {name} at offset {offset}, expected {expected}")));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| corrupt("tensor size overflow"))?;
        let end = offset as usize + 4 * n;
        if end > blob.len() {
            return Err(corrupt(format!("tensor {name} runs past the weight blob")));
        }
        let values: Vec<f32> = blob[offset as usize..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("tensor {name} holds non-finite weights")));
        }
        expected = end as u64;
        tensors.push(Entry { name, rows, cols, values });
    }
    if expected as usize != blob.len() {
        return Err(corrupt("weight blob has trailing bytes"));
    }

    let mut h = Reader::new(hyper_bytes);
    let model = match tag {
        CodecTag::Static => {
            let channels = to_usize(h.u32()?);
            let [e] = <[Entry; 1]>::try_from(tensors).map_err(|_| corrupt("static model needs one tensor"))?;
            if e.name != "default" || e.rows != channels || e.cols != spec.num_bins() {
                return Err(corrupt(format!("unexpected static tensor {} {}x{}", e.name, e.rows, e.cols)));
            }
            DistModel::Static(StaticModel::from_f32(spec, channels, e.values).map_err(|err| corrupt(err.to_string()))?)
        }
        CodecTag::Gmm => {
            let k = h.u8()? as usize;
            if !tensors.is_empty() {
                return Err(corrupt("mixture model carries no tensors"));
            }
            DistModel::Gmm(GmmModel::new(spec, k).map_err(|err| corrupt(err.to_string()))?)
        }
        CodecTag::Learned => {
            let mut v = [0usize; 6];
            for x in &mut v {
                *x = to_usize(h.u32()?);
            }
            let config = TransformConfig { channels: v[0], n_q: v[1], m_q: v[2], kernel: v[3], groups: v[4], bins: v[5] };
            let params = tensors
                .into_iter()
                .map(|e| {
                    let data = e.values.iter().map(|&x| x as f64).collect();
                    Ok(Param { name: e.name, value: Tensor::from_vec(e.rows, e.cols, data)? })
                })
                .collect::<Result<Vec<_>>>()?;
            let net = DistNet::from_params(config, params).map_err(|err| corrupt(err.to_string()))?;
            DistModel::Learned(LearnedModel::new(spec, net).map_err(|err| corrupt(err.to_string()))?)
        }
    };
    h.finish()?;
    Ok(model)
}
