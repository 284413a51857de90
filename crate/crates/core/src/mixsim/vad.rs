use crate::dsp::Waveform;

pub const DEFAULT_VAD_FRAME_MS: f64 = 25.0;
pub const DEFAULT_VAD_HOP_MS: f64 = 10.0;
pub const DEFAULT_VAD_THRESHOLD_DB: f64 = 40.0;

/// Energy-VAD framing parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub threshold_db: f64,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            frame_ms: DEFAULT_VAD_FRAME_MS,
            hop_ms: DEFAULT_VAD_HOP_MS,
            threshold_db: DEFAULT_VAD_THRESHOLD_DB,
        }
    }
}

impl VadParams {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        ((self.frame_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }
}

/// Per-frame active-speaker counts over a set of references.
#[derive(Clone, Debug, PartialEq)]
pub struct VadFrameLabels {
    pub counts: Vec<usize>,
    pub frame: usize,
    pub hop: usize,
    pub threshold_db: f64,
}

impl VadFrameLabels {
    pub fn from_references(refs: &[Waveform], params: VadParams) -> Self {
        let sr = refs.first().map_or(16_000, Waveform::sample_rate);
        let labels: Vec<Vec<bool>> = refs.iter().map(|r| vad(r, params)).collect();
        let n = labels.iter().map(Vec::len).max().unwrap_or(0);
        let counts = (0..n)
            .map(|t| {
                labels
                    .iter()
                    .filter(|l| l.get(t).copied().unwrap_or(false))
                    .count()
            })
            .collect();
        Self {
            counts,
            frame: params.frame_samples(sr),
            hop: params.hop_samples(sr),
            threshold_db: params.threshold_db,
        }
    }

    /// Fraction of voiced frames with two or more active speakers.
    pub fn overlap_ratio(&self) -> f64 {
        let voiced = self.counts.iter().filter(|&&c| c >= 1).count();
        let overlapped = self.counts.iter().filter(|&&c| c >= 2).count();
        if voiced == 0 {
            0.0
        } else {
            overlapped as f64 / voiced as f64
        }
    }
}

fn frame_rms(x: &[f64], frame: usize, hop: usize) -> Vec<f64> {
    let n = if x.len() <= frame {
        1
    } else {
        1 + (x.len() - frame) / hop
    };
    (0..n)
        .map(|t| {
            let end = (t * hop + frame).min(x.len());
            let seg = &x[(t * hop).min(end)..end];
            (seg.iter().map(|v| v * v).sum::<f64>() / frame as f64).sqrt()
        })
        .collect()
}

/// A frame is active iff its RMS is above `peak RMS − threshold_db`.
/// An all-zero signal has no active frames.
pub fn vad(w: &Waveform, params: VadParams) -> Vec<bool> {
    let sr = w.sample_rate();
    let rms = frame_rms(
        w.samples(),
        params.frame_samples(sr),
        params.hop_samples(sr),
    );
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return vec![false; rms.len()];
    }
    let floor = peak * 10f64.powf(-params.threshold_db / 20.0);
    rms.into_iter().map(|r| r > floor).collect()
}
