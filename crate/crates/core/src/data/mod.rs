//! Inputs: sample types, file formats, text embedding, splits, teacher
//! targets, the synthetic triple generator and deterministic batching.

mod batches;
mod formats;
mod manifest;
mod sample;
mod splits;
pub mod synthetic;
mod teacher;
mod text;

pub use batches::BatchPlan;
pub use formats::{
    load_image, load_spectrogram, load_stopwords, parse_stopwords, read_spectrogram, save_image,
    save_spectrogram, save_stopwords, write_spectrogram, EmbeddingTable, EMBT_MAGIC, SPEC_MAGIC,
};
pub use manifest::{
    read_labels, read_manifest, write_labels, write_manifest, DatasetIndex, FileDataset,
    ManifestRow, SampleSource, TrainingPair, EMBEDDINGS_FILE, LABELS_FILE, MANIFEST_FILE, STOPWORDS_FILE,
    TEACHER_FILE,
};
pub use sample::{
    check_payload_shape, stack_payloads, Modality, PairType, PairedBatch, Sample, IMAGE_CHANNELS,
    SOUND_CHANNELS, SOUND_FRAMES, TEXT_EMBED_DIM, TEXT_TOKENS,
};
pub use splits::{make_splits, SplitSizes, Splits};
pub use synthetic::{SyntheticCorpus, SyntheticWorld};
pub use teacher::TeacherTargets;
pub use text::{embed_text, tokenize};
