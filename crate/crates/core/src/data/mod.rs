//! Sample frames on disk and in memory.

pub mod dataset;
pub mod dvsf;
pub mod features;
pub mod synth;

pub use dataset::{
    dataset_ingest, write_dataset, Dataset, DatasetManifest, ManifestEntry, Normalizer,
};
pub use dvsf::{parse_csv, read_dvsf, write_csv, write_dvsf};
pub use features::export_features;
pub use synth::{synth_dataset_generate, synth_samples, SynthConfig, SynthVariant};

use crate::tensor::{Shape, Tensor};

/// Rows (time points) of a frame.
pub const FRAME_ROWS: usize = 256;
/// Columns (fiber positions) of a frame.
pub const FRAME_COLS: usize = 11;
pub const FRAME_SHAPE: Shape = Shape::new(1, FRAME_ROWS, FRAME_COLS);

/// A labelled single-channel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub frame: Tensor,
}
