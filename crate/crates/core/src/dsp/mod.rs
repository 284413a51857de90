//! Signal front- and back-end: STFT, mel filterbank, masking, WAV I/O.

mod mask;
mod mel;
mod stft;
pub mod wav;
mod waveform;

pub use mask::{apply_mask, MaskSet};
pub use mel::{hz_to_mel, mel_to_hz, mel_transform, MelFilterbank, DEFAULT_MEL_BANDS};
pub use stft::{
    frame_count, hann, istft, stft, Framing, Spectrogram, WindowKind, DEFAULT_FRAME_LENGTH,
    DEFAULT_HOP_LENGTH,
};
pub use waveform::{Waveform, DEFAULT_SAMPLE_RATE};
