//! Synthetic two-speaker mixtures with VAD-labelled overlap classes.
//!
//! Mixing is anechoic: references are the dry sources placed on the mixture
//! timeline, and `mixture = Σ references + noise` holds sample-exactly.

mod batch;
mod desk;
mod manifest;
mod mix;
mod source;
mod vad;

pub use batch::{batch_indices, make_batches};
pub use desk::DeskCorpus;
pub use manifest::{load_sample, read_manifest, write_dataset, ManifestRecord, MANIFEST_NAME};
pub use mix::{class_of, mix, noise_at_snr, MixtureSample, OverlapPattern, RATIO_TOLERANCE};
pub use source::{synth_source, SourceKind, SOURCE_RMS};
pub use vad::{vad, VadFrameLabels, VadParams};

#[cfg(test)]
mod tests;
