use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mix::{mix, MixtureSample, OverlapPattern};
use super::source::{synth_source, SourceKind};
use crate::dsp::DEFAULT_SAMPLE_RATE;
use crate::error::Result;

/// Generator for two-speaker mixtures whose sources occupy disjoint bands,
/// so a perfect time-frequency mask exists.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskCorpus {
    pub source_seconds: f64,
    pub sample_rate: u32,
    pub low_band: (f64, f64),
    pub high_band: (f64, f64),
    /// SNRs are drawn uniformly from this range.
    pub snr_db: (f64, f64),
    /// Partial-overlap ratios are drawn uniformly from this range.
    pub ratio: (f64, f64),
}

impl Default for DeskCorpus {
    fn default() -> Self {
        Self {
            source_seconds: 1.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            low_band: (150.0, 900.0),
            high_band: (1800.0, 4000.0),
            snr_db: (20.0, 30.0),
            ratio: (0.2, 0.8),
        }
    }
}

impl DeskCorpus {
    /// Source pair for `seed`, low band first.
    pub fn sources(&self, seed: u64) -> Result<(crate::dsp::Waveform, crate::dsp::Waveform)> {
        let (lo, hi) = (self.low_band, self.high_band);
        let a = synth_source(
            &SourceKind::SinusoidBand { lo: lo.0, hi: lo.1 },
            self.source_seconds,
            seed.wrapping_mul(3),
            self.sample_rate,
        )?;
        let b = synth_source(
            &SourceKind::SinusoidBand { lo: hi.0, hi: hi.1 },
            self.source_seconds,
            seed.wrapping_mul(3).wrapping_add(1),
            self.sample_rate,
        )?;
        Ok((a, b))
    }

    /// Random pattern, SNR and speaker order, all derived from `seed`.
    pub fn sample(&self, seed: u64) -> Result<MixtureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let pattern = match rng.random_range(0..3) {
            0 => OverlapPattern::Full,
            1 => OverlapPattern::Partial(rng.random_range(self.ratio.0..=self.ratio.1)),
            _ => OverlapPattern::Sequential,
        };
        self.sample_with(seed, pattern)
    }

    pub fn sample_with(&self, seed: u64, pattern: OverlapPattern) -> Result<MixtureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd_ba11);
        let (mut a, mut b) = self.sources(seed)?;
        if rng.random_bool(0.5) {
            std::mem::swap(&mut a, &mut b);
        }
        let snr = rng.random_range(self.snr_db.0..=self.snr_db.1);
        let noise_seed = rng.random();
        match (mix(&a, &b, pattern, snr, noise_seed), pattern) {
            // Short sources quantize the reachable ratios; redraw a few times.
            (Err(_), OverlapPattern::Partial(_)) => {
                for _ in 0..16 {
                    let r = rng.random_range(self.ratio.0..=self.ratio.1);
                    if let Ok(m) = mix(&a, &b, OverlapPattern::Partial(r), snr, noise_seed) {
                        return Ok(m);
                    }
                }
                mix(&a, &b, OverlapPattern::Full, snr, noise_seed)
            }
            (result, _) => result,
        }
    }
}

impl DeskCorpus {
    /// `size` samples for training step `step`. With `class_pure`, the
    /// whole batch is overlapped on odd steps and sequential on even ones.
    pub fn batch(
        &self,
        step: usize,
        size: usize,
        class_pure: bool,
        seed: u64,
    ) -> Result<Vec<MixtureSample>> {
        let base = seed
            .wrapping_mul(0x2545_f491_4f6c_dd1d)
            .wrapping_add(step as u64 * size as u64);
        (0..size as u64)
            .map(|k| {
                let s = base.wrapping_add(k);
                if !class_pure {
                    return self.sample(s);
                }
                let pattern = if step % 2 == 1 {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    if rng.random_bool(0.5) {
                        OverlapPattern::Full
                    } else {
                        OverlapPattern::Partial(rng.random_range(self.ratio.0..=self.ratio.1))
                    }
                } else {
                    OverlapPattern::Sequential
                };
                self.sample_with(s, pattern)
            })
            .collect()
    }
}
