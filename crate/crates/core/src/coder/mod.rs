//! Entropy coding of integer symbols under fixed per-channel pmfs, and the
//! container that carries the resulting payloads.

mod container;
mod freq;
mod rans;

pub use container::{
    pack_stream, unpack_stream, CodecTag, CodedStream, StreamHeader, EMPTY_STREAM_LEN, HEADER_LEN,
    STREAM_MAGIC, STREAM_VERSION,
};
pub use freq::{quantize_pmf, FreqTable, PRECISION, TOTAL};
pub use rans::{RansDecoder, RansEncoder};

pub(crate) use freq::quantize_masses;

use crate::error::{mismatch, Result};
use crate::support::HistogramSpec;

fn check_table(spec: HistogramSpec, table: &FreqTable) -> Result<()> {
    if table.num_bins() != spec.num_bins() {
        return Err(mismatch(format!(
            "table has {} bins, spec has {}",
            table.num_bins(),
            spec.num_bins()
        )));
    }
    Ok(())
}

/// Codes one channel of in-support values.
pub fn encode_channel(symbols: &[i32], spec: HistogramSpec, table: &FreqTable) -> Result<Vec<u8>> {
    let mut enc = RansEncoder::new();
    push_channel(&mut enc, symbols, spec, table)?;
    Ok(enc.finish())
}

/// Inverse of [`encode_channel`].
pub fn decode_channel(bytes: &[u8], spec: HistogramSpec, table: &FreqTable, count: usize) -> Result<Vec<i32>> {
    let mut dec = RansDecoder::new(bytes)?;
    let out = pull_channel(&mut dec, spec, table, count)?;
    dec.finish()?;
    Ok(out)
}

/// Queues a channel on a shared encoder (channel-major interleaving).
pub fn push_channel(enc: &mut RansEncoder, symbols: &[i32], spec: HistogramSpec, table: &FreqTable) -> Result<()> {
    check_table(spec, table)?;
    for &s in symbols {
        let offset = spec.bin_offset(s as i64)?;
        enc.put(table, offset);
    }
    Ok(())
}

pub fn pull_channel(dec: &mut RansDecoder<'_>, spec: HistogramSpec, table: &FreqTable, count: usize) -> Result<Vec<i32>> {
    check_table(spec, table)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(spec.y_min() + dec.get(table)? as i32);
    }
    Ok(out)
}

/// Ideal code length in bits of `symbols` under `table`:
/// `sum -log2(freq / 2^16)`.
pub fn table_code_length(symbols: &[i32], spec: HistogramSpec, table: &FreqTable) -> Result<f64> {
    check_table(spec, table)?;
    symbols
        .iter()
        .map(|&s| Ok(table.code_length(spec.bin_offset(s as i64)?)))
        .sum()
}
