use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{wav::read_wav, Waveform};
use crate::error::{invalid, Result};

/// RMS every synthetic source is normalized to.
pub const SOURCE_RMS: f64 = 0.1;
const PARTIALS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum SourceKind {
    /// Slowly amplitude-modulated partials strictly inside `[lo, hi]` Hz.
    SinusoidBand { lo: f64, hi: f64 },
    /// Gaussian noise with its spectrum zeroed outside `[lo, hi]` Hz.
    FilteredNoise { lo: f64, hi: f64 },
    /// First `seconds` of a mono WAV file, zero-padded if short.
    WavFile(PathBuf),
}

pub fn synth_source(
    kind: &SourceKind,
    seconds: f64,
    seed: u64,
    sample_rate: u32,
) -> Result<Waveform> {
    if !(seconds > 0.0) {
        return invalid(format!("source duration must be positive, got {seconds}"));
    }
    let len = (seconds * sample_rate as f64).round() as usize;
    let nyquist = sample_rate as f64 / 2.0;
    let check_band = |lo: f64, hi: f64| {
        if !(0.0 <= lo && lo < hi && hi <= nyquist) {
            return invalid(format!("band [{lo}, {hi}] Hz outside [0, {nyquist}]"));
        }
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        SourceKind::SinusoidBand { lo, hi } => {
            check_band(*lo, *hi)?;
            sinusoid_band(*lo, *hi, len, sample_rate, &mut rng)
        }
        SourceKind::FilteredNoise { lo, hi } => {
            check_band(*lo, *hi)?;
            filtered_noise(*lo, *hi, len, sample_rate, &mut rng)
        }
        SourceKind::WavFile(path) => return Ok(read_wav(path)?.resized(len)),
    };
    Waveform::new(normalize(samples), sample_rate)
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    }
    x
}

fn sinusoid_band<R: Rng>(lo: f64, hi: f64, len: usize, sr: u32, rng: &mut R) -> Vec<f64> {
    // Keep partials away from the edges so window leakage stays in band.
    let margin = (hi - lo) / 4.0;
    let margin = margin.min(125.0);
    let partials: Vec<(f64, f64, f64)> = (0..PARTIALS)
        .map(|_| {
            let f = rng.random_range(lo + margin..=hi - margin);
            (
                f,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let am_rate = rng.random_range(2.0..5.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let sr = sr as f64;
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            // syllable-rate envelope in [0.1, 1]
            let env = 0.55 + 0.45 * (2.0 * PI * am_rate * t + am_phase).sin();
            env * partials
                .iter()
                .map(|&(f, ph, a)| a * (2.0 * PI * f * t + ph).sin())
                .sum::<f64>()
        })
        .collect()
}

fn filtered_noise<R: Rng>(lo: f64, hi: f64, len: usize, sr: u32, rng: &mut R) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let f = bin as f64 * sr as f64 / len as f64;
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}
