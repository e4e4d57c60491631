//! Audio ingestion, log-mel extraction, quaternion encoding, feature files
//! and synthetic datasets.

mod encode;
mod file;
mod mel;
mod synth;

pub use encode::{encode_quaternion_features, QuaternionFeatures, MIN_FRAMES};
pub use file::{load_feature_array, load_feature_file, save_feature_array, FeatureArray, FeatureData, FeatureFile};
pub use mel::{
    frame_count, mel_centers, mel_filterbank, read_wav, wav_to_mel, MelConfig, MelSpectrogram, Padding, StftMeta, FMAX,
    FMIN, HOP, LOG_FLOOR, MEL_BINS, SAMPLE_RATE, WINDOW,
};
pub use synth::{load_dataset_dir, save_dataset_dir, synth_dataset, SynthSpec};
