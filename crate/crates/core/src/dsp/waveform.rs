use crate::error::{invalid, Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    /// Zero-pads or truncates to `len` samples.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of `[start, start + len)`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        let mut samples = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            samples[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Signal delayed by `delay` samples, total length `len`.
    pub fn delayed(&self, delay: usize, len: usize) -> Self {
        let mut samples = vec![0.0; len];
        for (i, &v) in self.samples.iter().enumerate() {
            if let Some(s) = samples.get_mut(i + delay) {
                *s = v;
            }
        }
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}
