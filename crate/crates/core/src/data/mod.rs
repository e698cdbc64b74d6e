//! Record ingestion, splitting, epoch sampling, synthetic corpora,
//! probability matrices and nearest-neighbour retrieval.

mod probs;
mod records;
mod retrieve;
mod sampler;
mod split;
mod synth;

pub use probs::{decode_probs, encode_probs, load_probs, load_probs_for, save_probs, PROBS_VERSION};
pub use records::{
    format_timestamp, ingest_records, parse_records, save_records, write_records, ImageRecord,
    IngestReport, RecordFormat, Rejection, RECORD_COLUMNS,
};
pub use retrieve::l2_retrieve;
pub use sampler::{EpochSampler, SamplerParams};
pub use split::{random_split, split_indices, Split};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpus};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("delimited parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("required column `{0}` is missing")]
    MissingColumn(String),
    #[error("format mismatch: {rejected} of {total} rows rejected")]
    FormatMismatch { rejected: usize, total: usize },
    #[error("fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions(Vec<f64>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("malformed probability matrix: {0}")]
    ProbsFormat(String),
    #[error("probability matrix checksum mismatch")]
    Checksum,
}
