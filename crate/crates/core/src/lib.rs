//! Lossless coding of quantized latent tensors with input-adaptive,
//! per-channel encoding distributions.
//!
//! A factorized entropy model codes every element of a latent channel with
//! one pmf. A static, dataset-averaged pmf wastes `KL(p || p_default)` bits
//! per element relative to the channel's own histogram `p`. The codecs here
//! transmit a compact description of `p` as side information instead:
//!
//! * [`codecs::StaticModel`]: the amortized baseline, no side information.
//! * [`codecs::GmmModel`]: a quantized Gaussian mixture fitted per channel.
//! * [`codecs::LearnedModel`]: a small grouped-convolution autoencoder over
//!   the histogram bank whose latent is itself entropy coded.
//!
//! Rates are always measured from real rANS bitstreams.

pub mod codecs;
pub mod coder;
pub mod error;
pub mod eval;
pub mod histogram;
pub mod ltf;
pub mod nn;
pub mod support;
mod wire;

pub use error::{Error, Result};
pub use support::{clamp_to_support, HistogramSpec, LatentTensor, Pmf, PmfBank, EPS_P};
