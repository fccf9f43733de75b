//! Interchange formats: `CGNM` matrices, JSON transcripts, manifests,
//! token lists, datasets of bundles, aligned-pair directories and run
//! configs.

mod config;
mod dataset;
mod files;
mod matrix;

pub use config::{load_config, ConfigFormat, RunConfig, Scale};
pub use dataset::{
    load_dataset, load_pairs, load_transcripts, read_aligned, read_dataset_index, write_aligned, write_dataset_index,
    AlignSettings, DatasetIndex, ALIGNED_FILE, DATASET_FILE,
};
pub use files::{
    align_bundle, annotate_pauses, load_bundle, read_manifest, read_tokens, read_transcript, validate_bundle,
    write_bundle, write_manifest, write_tokens, write_transcript, AnnotatedEntry, AnnotatedTranscript, Manifest,
    SampleBundle, TokenEntry, TranscriptFile, MANIFEST_FILE,
};
pub use matrix::{
    decode_header, decode_matrix, encode_matrix, read_matrix, read_matrix_header, write_matrix, Matrix, MatrixHeader,
    MATRIX_HEADER_BYTES, MATRIX_VERSION,
};
