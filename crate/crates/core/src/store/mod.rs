//! On-disk formats: checkpoints, dataset directories and the synthetic
//! dataset generator. All numeric payloads are little-endian f32.

mod checkpoint;
mod dataset;
mod synth;

pub use checkpoint::{
    from_bytes, load_checkpoint, read_header, save_checkpoint, to_bytes, CheckpointError, Header, TensorEntry,
    EXTENSION, FORMAT_VERSION, MAGIC,
};
pub use dataset::{
    load_ground_truth, read_f32, write_f32, Dataset, DatasetManifest, EmbeddingTable, GroundTruth, QueryRecord, Split,
    VideoMeta, VideoRecord,
};
pub use synth::{concept_name, positive_range, synth_dataset, synth_records, SynthConfig, MIN_SHOTS};
