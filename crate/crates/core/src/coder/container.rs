//! `DCS1` coded-stream container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DCS1" | u8 version | u8 codec tag | i32 y_min | i32 y_max
//!        | u32 C | u32 H_y | u32 W_y | u32 s
//!        | u32 side_len | side bytes | u32 latent_len | latent bytes
//! ```
//!
//! A stream with empty payloads is [`EMPTY_STREAM_LEN`] bytes long.

use crate::error::{corrupt, Result};
use crate::support::HistogramSpec;
use crate::wire::{Reader, Writer};

pub const STREAM_MAGIC: &[u8; 4] = b"DCS1";
pub const STREAM_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
pub const EMPTY_STREAM_LEN: usize = HEADER_LEN + 8;

/// Which distribution back-end produced a stream or model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecTag {
    Static = 0,
    Gmm = 1,
    Learned = 2,
}

impl CodecTag {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CodecTag::Static),
            1 => Ok(CodecTag::Gmm),
            2 => Ok(CodecTag::Learned),
            t => Err(corrupt(format!("unknown codec tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecTag::Static => "static",
            CodecTag::Gmm => "gmm",
            CodecTag::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub codec: CodecTag,
    pub spec: HistogramSpec,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub downscale: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedStream {
    pub header: StreamHeader,
    pub side_info: Vec<u8>,
    pub latent_payload: Vec<u8>,
}

impl CodedStream {
    pub fn side_bits(&self) -> u64 {
        8 * self.side_info.len() as u64
    }

    pub fn latent_bits(&self) -> u64 {
        8 * self.latent_payload.len() as u64
    }

    /// Bits of the whole packed stream, header included.
    pub fn total_bits(&self) -> u64 {
        8 * (EMPTY_STREAM_LEN + self.side_info.len() + self.latent_payload.len()) as u64
    }

    /// Side-info plus latent payload bits; the fixed header is identical for
    /// every codec and left out of rate comparisons.
    pub fn payload_bits(&self) -> u64 {
        self.side_bits() + self.latent_bits()
    }
}

pub fn pack_stream(stream: &CodedStream) -> Vec<u8> {
    let h = &stream.header;
    let mut w = Writer::new();
    w.bytes(STREAM_MAGIC);
    w.u8(h.version);
    w.u8(h.codec as u8);
    w.i32(h.spec.y_min());
    w.i32(h.spec.y_max());
    w.u32(h.channels);
    w.u32(h.height);
    w.u32(h.width);
    w.u32(h.downscale);
    w.section(&stream.side_info);
    w.section(&stream.latent_payload);
    w.finish()
}

pub fn unpack_stream(bytes: &[u8]) -> Result<CodedStream> {
    let mut r = Reader::new(bytes);
    r.expect_magic(STREAM_MAGIC)?;
    let version = r.u8()?;
    if version != STREAM_VERSION {
        return Err(corrupt(format!("unsupported stream version {version}")));
    }
    let codec = CodecTag::from_u8(r.u8()?)?;
    let spec = HistogramSpec::new(r.i32()?, r.i32()?).map_err(|e| corrupt(e.to_string()))?;
    let header = StreamHeader {
        version,
        codec,
        spec,
        channels: r.u32()?,
        height: r.u32()?,
        width: r.u32()?,
        downscale: r.u32()?,
    };
    let side_info = r.section()?.to_vec();
    let latent_payload = r.section()?.to_vec();
    r.finish()?;
    Ok(CodedStream { header, side_info, latent_payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn header() -> StreamHeader {
        StreamHeader {
            version: STREAM_VERSION,
            codec: CodecTag::Gmm,
            spec: HistogramSpec::low_rate(),
            channels: 32,
            height: 16,
            width: 24,
            downscale: 16,
        }
    }

    #[test]
    fn empty_payloads_have_fixed_length() {
        let s = CodedStream { header: header(), side_info: vec![], latent_payload: vec![] };
        let bytes = pack_stream(&s);
        assert_eq!(bytes.len(), EMPTY_STREAM_LEN);
        assert_eq!(EMPTY_STREAM_LEN, 38);
        assert_eq!(unpack_stream(&bytes).unwrap(), s);
        assert_eq!(s.total_bits(), 8 * 38);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let s = CodedStream { header: header(), side_info: vec![1, 2, 3], latent_payload: vec![9; 17] };
        let bytes = pack_stream(&s);
        assert!(matches!(unpack_stream(&bytes[..bytes.len() - 1]), Err(Error::CorruptStream(_))));
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(unpack_stream(&bad), Err(Error::CorruptStream(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(unpack_stream(&bad), Err(Error::CorruptStream(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(unpack_stream(&long), Err(Error::CorruptStream(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(
            side in proptest::collection::vec(any::<u8>(), 0..64),
            latent in proptest::collection::vec(any::<u8>(), 0..256),
            tag in 0u8..3,
            y_min in -300i32..0,
            width in 0i32..600,
            dims in (any::<u32>(), any::<u32>(), any::<u32>(), 1u32..64),
        ) {
            let h = StreamHeader {
                version: STREAM_VERSION,
                codec: CodecTag::from_u8(tag).unwrap(),
                spec: HistogramSpec::new(y_min, y_min + width).unwrap(),
                channels: dims.0,
                height: dims.1,
                width: dims.2,
                downscale: dims.3,
            };
            let s = CodedStream { header: h, side_info: side, latent_payload: latent };
            let bytes = pack_stream(&s);
            prop_assert_eq!(bytes.len() as u64 * 8, s.total_bits());
            prop_assert_eq!(unpack_stream(&bytes).unwrap(), s);
        }
    }
}
