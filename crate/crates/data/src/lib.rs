//! Synthetic shower events, the SHWR binary record format, and the
//! shuffle/batch/prefetch input pipeline.

use std::path::Path;

use thiserror::Error;

pub mod pipeline;
pub mod records;
pub mod synth;

pub use pipeline::{batch, prefetch, shuffle, shuffle_batch, PrefetchIter};
pub use records::{crc32, read_all_records, read_records, write_records, RecordReader, MAGIC};
pub use synth::{synth_dataset, synth_shower, synth_shower_with, ShowerEvent, ShowerParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("bad magic {found:?}; not a SHWR record file")]
    BadMagic { found: Vec<u8> },
    #[error("length CRC mismatch in record {index} at byte {offset}")]
    LengthCrc { offset: u64, index: usize },
    #[error("payload CRC mismatch in record {index} at byte {offset}")]
    PayloadCrc { offset: u64, index: usize },
    #[error("truncated record {index} at byte {offset}")]
    Truncated { offset: u64, index: usize },
    #[error("malformed record {index} at byte {offset}: {reason}")]
    Malformed {
        offset: u64,
        index: usize,
        reason: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Input-pipeline settings for one training run.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub shuffle_buffer: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub prefetch_depth: usize,
    pub drop_last: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            shuffle_buffer: 256,
            batch_size: 32,
            seed: 0,
            prefetch_depth: 2,
            drop_last: true,
        }
    }
}

fn mix_epoch_seed(seed: u64, epoch: u64) -> u64 {
    // splitmix64 step over (seed, epoch) so epochs reshuffle differently.
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Streams one epoch of shuffled, batched, prefetched event batches from a
/// record file. Every non-dropped record appears exactly once; the order is
/// deterministic in (seed, epoch).
pub fn epoch_batches(
    path: &Path,
    cfg: &PipelineConfig,
    epoch: u64,
) -> Result<PrefetchIter<Result<Vec<ShowerEvent>>>> {
    let reader = read_records(path)?;
    let shuffled = shuffle(reader, cfg.shuffle_buffer, mix_epoch_seed(cfg.seed, epoch));
    let batched = batch(shuffled, cfg.batch_size, cfg.drop_last)
        .map(|items| items.into_iter().collect::<Result<Vec<ShowerEvent>>>());
    Ok(prefetch(batched, cfg.prefetch_depth))
}
