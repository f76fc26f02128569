//! rANS with a 64-bit state, 32-bit renormalization words and 16-bit
//! frequency precision.
//!
//! Symbols are buffered and coded in reverse so the decoder reads forward.
//! The stream is a little-endian sequence of u32 words: the final encoder
//! state (low word first) followed by the renormalization words. An empty
//! symbol sequence produces an empty stream. The decoder checks that it ends
//! on the initial state with every word consumed, which catches most
//! truncations and table mismatches.

use super::freq::{FreqTable, PRECISION};
use crate::error::{corrupt, Result};

const RANS_L: u64 = 1 << 31;
const MASK: u64 = (1 << PRECISION) - 1;

#[derive(Debug, Default)]
pub struct RansEncoder {
    // (start, freq) per symbol, in coding order.
    pending: Vec<(u32, u32)>,
}

impl RansEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues the 0-based bin `offset` of `table`.
    pub fn put(&mut self, table: &FreqTable, offset: usize) {
        self.pending.push((table.start(offset), table.freq(offset)));
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        if self.pending.is_empty() {
            return Vec::new();
        }
        let mut x = RANS_L;
        let mut words: Vec<u32> = Vec::with_capacity(self.pending.len() / 2 + 2);
        for &(start, freq) in self.pending.iter().rev() {
            let freq = freq as u64;
            let x_max = ((RANS_L >> PRECISION) << 32) * freq;
            if x >= x_max {
                words.push(x as u32);
                x >>= 32;
            }
            x = ((x / freq) << PRECISION) + (x % freq) + start as u64;
        }
        words.push((x >> 32) as u32);
        words.push(x as u32);
        words.reverse();
        let mut out = Vec::with_capacity(words.len() * 4);
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }
}

pub struct RansDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    state: u64,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(corrupt(format!("rANS payload of {} bytes is not word aligned", bytes.len())));
        }
        let mut d = Self { bytes, pos: 0, state: 0 };
        if !bytes.is_empty() {
            if bytes.len() < 8 {
                return Err(corrupt("rANS payload shorter than its state"));
            }
            let lo = d.word()? as u64;
            let hi = d.word()? as u64;
            d.state = lo | (hi << 32);
            if d.state < RANS_L {
                return Err(corrupt("rANS state below normalization bound"));
            }
        }
        Ok(d)
    }

    fn word(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| corrupt("rANS payload truncated"))?;
        self.pos = end;
        Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
    }

    /// Decodes one 0-based bin offset.
    pub fn get(&mut self, table: &FreqTable) -> Result<usize> {
        if self.bytes.is_empty() {
            return Err(corrupt("rANS payload is empty"));
        }
        let slot = (self.state & MASK) as u32;
        let offset = table.lookup(slot);
        let start = table.start(offset) as u64;
        let freq = table.freq(offset) as u64;
        let mut x = freq * (self.state >> PRECISION) + (self.state & MASK) - start;
        if x < RANS_L {
            x = (x << 32) | self.word()? as u64;
        }
        self.state = x;
        Ok(offset)
    }

    pub fn finish(self) -> Result<()> {
        if self.bytes.is_empty() {
            return Ok(());
        }
        if self.pos != self.bytes.len() || self.state != RANS_L {
            return Err(corrupt("rANS stream did not end on its initial state"));
        }
        Ok(())
    }
}
