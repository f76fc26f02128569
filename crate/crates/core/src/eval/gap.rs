use std::fmt::Write as _;

use super::metrics::potential_savings_bpp;
use crate::codecs::{codec_compress, codec_decompress, DistModel, StaticModel};
use crate::error::{corrupt, Error, Result};
use crate::histogram::latent_histograms;
use crate::support::LatentTensor;

/// One row of a gap report. All rates are bits per image pixel; gains are
/// negative when the codec saves rate relative to the static baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub image: String,
    pub original_bpp: f64,
    pub potential_gain_bpp: f64,
    pub potential_gain_pct: f64,
    pub achieved_bpp: f64,
    pub achieved_gain_bpp: f64,
    pub achieved_gain_pct: f64,
    pub side_info_bpp: f64,
}

/// Per-image rows plus a uniform-average aggregate row.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub aggregate: GapRow,
}

pub const CSV_HEADER: &str =
    "image,original_bpp,potential_gain_bpp,potential_gain_pct,achieved_bpp,achieved_gain_bpp,achieved_gain_pct,side_info_bpp";

/// Label of the aggregate row.
pub const AGGREGATE_LABEL: &str = "*";

impl GapRow {
    fn values(&self) -> [f64; 7] {
        [
            self.original_bpp,
            self.potential_gain_bpp,
            self.potential_gain_pct,
            self.achieved_bpp,
            self.achieved_gain_bpp,
            self.achieved_gain_pct,
            self.side_info_bpp,
        ]
    }
}

impl GapReport {
    /// One line per image followed by the aggregate; floats use the
    /// shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&row.image);
            for v in row.values() {
                write!(out, ",{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width table in the layout of the usual potential/achieved
    /// savings comparison.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<12} {:>10} {:>12} {:>9} {:>10} {:>12} {:>9} {:>10}",
            "image", "orig bpp", "pot. (bpp)", "pot. %", "ach. bpp", "ach. (bpp)", "ach. %", "side bpp"
        )
        .expect("writing to a String");
        for row in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            writeln!(
                out,
                "{:<12} {:>10.5} {:>12.5} {:>9.2} {:>10.5} {:>12.5} {:>9.2} {:>10.5}",
                row.image,
                row.original_bpp,
                row.potential_gain_bpp,
                row.potential_gain_pct,
                row.achieved_bpp,
                row.achieved_gain_bpp,
                row.achieved_gain_pct,
                row.side_info_bpp
            )
            .expect("writing to a String");
        }
        out.push_str("(* = uniform average over images; % columns average per-image percentages)\n");
        out
    }
}

/// Real coded size of one latent, after checking the stream decodes back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub side_bits: u64,
    pub latent_bits: u64,
    pub bpp: f64,
}

pub fn measure(latent: &LatentTensor, model: &DistModel) -> Result<Measured> {
    let stream = codec_compress(latent, model)?;
    if codec_decompress(&stream, model)? != *latent {
        return Err(corrupt("stream did not decode to its input"));
    }
    Ok(Measured {
        side_bits: stream.side_bits(),
        latent_bits: stream.latent_bits(),
        bpp: stream.payload_bits() as f64 / latent.image_pixels(),
    })
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole == 0.0 {
        0.0
    } else {
        100.0 * part / whole
    }
}

/// Potential and achieved savings of `model` over `baseline` on `corpus`.
///
/// Achieved numbers come from real bitstreams (side information included);
/// the potential number is the KL bound against the baseline's coding pmfs.
/// Rows are labelled by position in `corpus`.
pub fn gap_report(corpus: &[LatentTensor], model: &DistModel, baseline: &StaticModel) -> Result<GapReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let base = DistModel::Static(baseline.clone());
    let default = baseline.coding_bank();
    let mut rows = Vec::with_capacity(corpus.len());
    for (i, latent) in corpus.iter().enumerate() {
        let original = measure(latent, &base)?;
        let achieved = if *model == base { original } else { measure(latent, model)? };
        let potential = -potential_savings_bpp(&latent_histograms(latent)?, &default, latent.downscale())?;
        let gain = achieved.bpp - original.bpp;
        rows.push(GapRow {
            image: format!("{i:04}"),
            original_bpp: original.bpp,
            potential_gain_bpp: potential,
            potential_gain_pct: pct(potential, original.bpp),
            achieved_bpp: achieved.bpp,
            achieved_gain_bpp: gain,
            achieved_gain_pct: pct(gain, original.bpp),
            side_info_bpp: achieved.side_bits as f64 / latent.image_pixels(),
        });
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&GapRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let aggregate = GapRow {
        image: AGGREGATE_LABEL.into(),
        original_bpp: mean(|r| r.original_bpp),
        potential_gain_bpp: mean(|r| r.potential_gain_bpp),
        potential_gain_pct: mean(|r| r.potential_gain_pct),
        achieved_bpp: mean(|r| r.achieved_bpp),
        achieved_gain_bpp: mean(|r| r.achieved_gain_bpp),
        achieved_gain_pct: mean(|r| r.achieved_gain_pct),
        side_info_bpp: mean(|r| r.side_info_bpp),
    };
    Ok(GapReport { rows, aggregate })
}
