use serde::{Deserialize, Serialize};

use super::source::{synth_source, SourceKind};
use super::vad::{VadFrameLabels, VadParams};
use crate::class::OverlapClass;
use crate::dsp::Waveform;
use crate::error::{invalid, Result};

/// Largest allowed gap between requested and VAD-measured overlap ratio.
pub const RATIO_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "ratio")]
pub enum OverlapPattern {
    /// Both sources start together.
    Full,
    /// The second source is delayed so the voiced-overlap fraction hits the ratio.
    Partial(f64),
    /// The second source starts after the first ends, with a silent gap.
    Sequential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    /// One per speaker, zero-padded to the mixture length.
    pub references: Vec<Waveform>,
    pub noise: Waveform,
    pub overlap_class: OverlapClass,
    pub overlap_ratio: f64,
    pub snr_db: f64,
}

impl MixtureSample {
    /// Builds a sample from aligned references and noise, labelling overlap
    /// by VAD on the references alone.
    pub fn assemble(references: Vec<Waveform>, noise: Waveform, snr_db: f64) -> Result<Self> {
        let len = noise.len();
        let sr = noise.sample_rate();
        if references.is_empty()
            || references
                .iter()
                .any(|r| r.len() != len || r.sample_rate() != sr)
        {
            return invalid("references and noise must share length and sample rate");
        }
        let mut mix = noise.samples().to_vec();
        for r in &references {
            for (m, v) in mix.iter_mut().zip(r.samples()) {
                *m += v;
            }
        }
        let ratio =
            VadFrameLabels::from_references(&references, VadParams::default()).overlap_ratio();
        Ok(Self {
            mixture: Waveform::new(mix, sr)?,
            references,
            noise,
            overlap_class: class_of(ratio),
            overlap_ratio: ratio,
            snr_db,
        })
    }

    pub fn speech(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.mixture.len()];
        for r in &self.references {
            for (a, b) in s.iter_mut().zip(r.samples()) {
                *a += b;
            }
        }
        s
    }
}

pub fn class_of(ratio: f64) -> OverlapClass {
    if ratio > 0.0 {
        OverlapClass::Overlap
    } else {
        OverlapClass::NonOverlap
    }
}

fn measured_ratio(a: &Waveform, b: &Waveform, delay: usize, vad: VadParams) -> f64 {
    let len = a.len().max(delay + b.len());
    let refs = [a.resized(len), b.delayed(delay, len)];
    VadFrameLabels::from_references(&refs, vad).overlap_ratio()
}

/// Delay for `b` whose measured overlap ratio is closest to `ratio`,
/// scanning in VAD-hop steps.
fn delay_for_ratio(a: &Waveform, b: &Waveform, ratio: f64, vad: VadParams) -> Result<usize> {
    let hop = vad.hop_samples(a.sample_rate());
    let mut best = (f64::INFINITY, 0);
    for delay in (0..=a.len()).step_by(hop) {
        let err = (measured_ratio(a, b, delay, vad) - ratio).abs();
        if err < best.0 {
            best = (err, delay);
        }
    }
    if best.0 > RATIO_TOLERANCE {
        return invalid(format!(
            "overlap ratio {ratio} unreachable for sources of {} and {} samples (closest off by {:.3})",
            a.len(),
            b.len(),
            best.0
        ));
    }
    Ok(best.1)
}

/// Broadband noise scaled so speech power / noise power is exactly `snr_db`.
/// An infinite SNR gives silence.
pub fn noise_at_snr(speech: &[f64], snr_db: f64, seed: u64, sample_rate: u32) -> Result<Waveform> {
    let len = speech.len();
    if snr_db.is_infinite() && snr_db > 0.0 || len == 0 {
        return Ok(Waveform::silence(len, sample_rate));
    }
    if !snr_db.is_finite() {
        return invalid(format!("snr must be finite or +inf, got {snr_db}"));
    }
    let nyq = sample_rate as f64 / 2.0;
    let kind = SourceKind::FilteredNoise {
        lo: 50.0,
        hi: nyq - 50.0,
    };
    let secs = len as f64 / sample_rate as f64;
    let raw = synth_source(&kind, secs, seed, sample_rate)?.resized(len);
    let ps = speech.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let pn = raw.power();
    let gain = if pn > 0.0 {
        (ps / 10f64.powf(snr_db / 10.0) / pn).sqrt()
    } else {
        0.0
    };
    Waveform::new(
        raw.samples().iter().map(|v| v * gain).collect(),
        sample_rate,
    )
}

/// Two-speaker anechoic mixture with additive noise.
pub fn mix(
    a: &Waveform,
    b: &Waveform,
    pattern: OverlapPattern,
    snr_db: f64,
    noise_seed: u64,
) -> Result<MixtureSample> {
    let sr = a.sample_rate();
    if b.sample_rate() != sr {
        return invalid(format!("sample rates differ: {sr} vs {}", b.sample_rate()));
    }
    if a.is_empty() || b.is_empty() {
        return invalid("cannot mix empty sources");
    }
    let vad = VadParams::default();
    let delay = match pattern {
        OverlapPattern::Full => 0,
        OverlapPattern::Sequential => a.len() + vad.frame_samples(sr) + vad.hop_samples(sr),
        OverlapPattern::Partial(r) => {
            if !(r > 0.0 && r < 1.0) {
                return invalid(format!("partial overlap ratio must lie in (0, 1), got {r}"));
            }
            delay_for_ratio(a, b, r, vad)?
        }
    };
    let len = a.len().max(delay + b.len());
    let refs = vec![a.resized(len), b.delayed(delay, len)];
    let speech: Vec<f64> = refs[0]
        .samples()
        .iter()
        .zip(refs[1].samples())
        .map(|(x, y)| x + y)
        .collect();
    let noise = noise_at_snr(&speech, snr_db, noise_seed, sr)?;
    MixtureSample::assemble(refs, noise, snr_db)
}
