//! 16 kHz mono 16-bit PCM WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    if spec.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(Error::WavFormat(format!(
            "{}: sample rate {} Hz, expected {DEFAULT_SAMPLE_RATE}",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &v in w.samples() {
        writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
