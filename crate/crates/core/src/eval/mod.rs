//! Rate accounting, amortization-gap analysis and synthetic corpora.

mod corpus;
mod experiment;
mod gap;
mod metrics;

pub use corpus::{generate_corpus, SyntheticCorpusSpec, SyntheticImage};
pub use experiment::{examples, train_learned};
pub use gap::{gap_report, measure, GapReport, GapRow, Measured, AGGREGATE_LABEL, CSV_HEADER};
pub use metrics::{cross_entropy_bits, entropy_bits, kl_bits, mean_potential_savings_bpp, potential_savings_bpp};
