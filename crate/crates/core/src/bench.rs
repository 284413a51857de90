//! Real-time-factor measurement of single-threaded inference.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conformer::SsModel;
use crate::css::separate_once;
use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{invalid, Result};
use crate::nn::{Params, Scalar};

pub const DEFAULT_BENCH_SECONDS: f64 = 2.4;
pub const DEFAULT_REPEATS: usize = 100;
pub const DEFAULT_WARMUP: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchParams {
    pub seconds: f64,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            seconds: DEFAULT_BENCH_SECONDS,
            repeats: DEFAULT_REPEATS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtfReport {
    pub mean_rtf: f64,
    pub p50: f64,
    pub p95: f64,
    /// Per-run RTFs in measurement order.
    pub runs: Vec<f64>,
}

impl RtfReport {
    fn from_runs(runs: Vec<f64>) -> Self {
        let mut sorted = runs.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        Self {
            mean_rtf: runs.iter().sum::<f64>() / runs.len() as f64,
            p50: q(0.5),
            p95: q(0.95),
            runs,
        }
    }
}

fn bench_audio(p: &BenchParams) -> Result<Waveform> {
    if !(p.seconds > 0.0) || p.repeats == 0 {
        return invalid("benchmark needs a positive duration and at least one repeat");
    }
    let len = (p.seconds * DEFAULT_SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    Waveform::new(
        (0..len).map(|_| rng.random_range(-0.3..0.3)).collect(),
        DEFAULT_SAMPLE_RATE,
    )
}

fn time_once<T: Scalar>(model: &SsModel, params: &Params<T>, audio: &Waveform) -> Result<f64> {
    let start = Instant::now();
    let out = separate_once(model, params, audio)?;
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(out);
    Ok(elapsed / audio.duration_secs())
}

/// Separates the same clip `repeats` times on the calling thread after
/// `warmup` untimed runs. RTF is wall-clock time over audio duration.
pub fn bench_rtf<T: Scalar>(
    model: &SsModel,
    params: &Params<T>,
    p: &BenchParams,
) -> Result<RtfReport> {
    let audio = bench_audio(p)?;
    for _ in 0..p.warmup {
        time_once(model, params, &audio)?;
    }
    let runs = (0..p.repeats)
        .map(|_| time_once(model, params, &audio))
        .collect::<Result<Vec<_>>>()?;
    Ok(RtfReport::from_runs(runs))
}

/// Benchmarks two models with interleaved runs so slow drifts in machine
/// load hit both equally. Returns both reports and the relative increase of
/// the second's mean RTF over the first's.
pub fn compare_rtf<T: Scalar>(
    base: (&SsModel, &Params<T>),
    other: (&SsModel, &Params<T>),
    p: &BenchParams,
) -> Result<(RtfReport, RtfReport, f64)> {
    let audio = bench_audio(p)?;
    for _ in 0..p.warmup {
        time_once(base.0, base.1, &audio)?;
        time_once(other.0, other.1, &audio)?;
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..p.repeats {
        if k % 2 == 0 {
            a.push(time_once(base.0, base.1, &audio)?);
            b.push(time_once(other.0, other.1, &audio)?);
        } else {
            b.push(time_once(other.0, other.1, &audio)?);
            a.push(time_once(base.0, base.1, &audio)?);
        }
    }
    let (ra, rb) = (RtfReport::from_runs(a), RtfReport::from_runs(b));
    let increase = rb.mean_rtf / ra.mean_rtf - 1.0;
    Ok((ra, rb, increase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformer::{ConformerConfig, ExpertConfig, MoeVariant};

    fn tiny() -> ConformerConfig {
        ConformerConfig {
            num_blocks: 1,
            model_dim: 8,
            heads: 2,
            ffn_hidden: 8,
            conv_kernel: 3,
            input_dim: 33,
            hop_length: 16,
            ..ConformerConfig::default()
        }
    }

    #[test]
    fn report_is_ordered_and_positive() {
        let (m, p) = SsModel::init::<f32>(tiny(), 0).unwrap();
        let bp = BenchParams {
            seconds: 0.2,
            repeats: 9,
            warmup: 1,
            seed: 0,
        };
        let r = bench_rtf(&m, &p, &bp).unwrap();
        assert_eq!(r.runs.len(), 9);
        assert!(r.mean_rtf > 0.0 && r.p50 > 0.0);
        assert!(r.p50 <= r.p95);
        assert!(bench_rtf(&m, &p, &BenchParams { repeats: 0, ..bp }).is_err());
    }

    #[test]
    fn comparison_reports_both() {
        let (a, pa) = SsModel::init::<f32>(tiny(), 0).unwrap();
        let (b, pb) =
            SsModel::init::<f32>(tiny().with_moe(MoeVariant::Moe(ExpertConfig::default())), 0)
                .unwrap();
        let bp = BenchParams {
            seconds: 0.2,
            repeats: 4,
            warmup: 1,
            seed: 0,
        };
        let (ra, rb, inc) = compare_rtf((&a, &pa), (&b, &pb), &bp).unwrap();
        assert_eq!((ra.runs.len(), rb.runs.len()), (4, 4));
        assert!(inc.is_finite());
    }
}
