use proptest::prelude::*;

use super::*;
use crate::class::OverlapClass;
use crate::dsp::{stft, Waveform};

const SR: u32 = 16_000;

fn band_fraction(w: &Waveform, lo: f64, hi: f64) -> f64 {
    let s = stft(w, 512, 256).unwrap();
    let (mut inside, mut total) = (0.0, 0.0);
    for t in 0..s.n_frames() {
        for k in 0..s.n_bins() {
            let e = s.at(t, k).norm_sqr();
            let f = k as f64 * SR as f64 / 512.0;
            total += e;
            if (lo..=hi).contains(&f) {
                inside += e;
            }
        }
    }
    inside / total
}

fn tone(len: usize, amp: f64) -> Vec<f64> {
    (0..len).map(|n| amp * (n as f64 * 0.3).sin()).collect()
}

#[test]
fn sinusoid_band_keeps_energy_in_band() {
    for seed in 0..5 {
        let w = synth_source(
            &SourceKind::SinusoidBand {
                lo: 500.0,
                hi: 1000.0,
            },
            1.0,
            seed,
            SR,
        )
        .unwrap();
        assert_eq!(w.len(), SR as usize);
        assert!(band_fraction(&w, 500.0, 1000.0) >= 0.95);
    }
}

#[test]
fn filtered_noise_keeps_energy_in_band() {
    let w = synth_source(
        &SourceKind::FilteredNoise {
            lo: 2000.0,
            hi: 3000.0,
        },
        0.5,
        1,
        SR,
    )
    .unwrap();
    assert!(band_fraction(&w, 1900.0, 3100.0) >= 0.95);
    assert!((w.rms() - SOURCE_RMS).abs() < 1e-9);
}

#[test]
fn sources_are_seed_deterministic() {
    let k = SourceKind::SinusoidBand {
        lo: 100.0,
        hi: 700.0,
    };
    let a = synth_source(&k, 0.3, 42, SR).unwrap();
    assert_eq!(a, synth_source(&k, 0.3, 42, SR).unwrap());
    assert_ne!(a, synth_source(&k, 0.3, 43, SR).unwrap());
}

#[test]
fn source_preconditions() {
    let k = SourceKind::SinusoidBand {
        lo: 100.0,
        hi: 700.0,
    };
    assert!(synth_source(&k, 0.0, 0, SR).is_err());
    assert!(synth_source(
        &SourceKind::SinusoidBand {
            lo: 900.0,
            hi: 100.0
        },
        1.0,
        0,
        SR
    )
    .is_err());
    let missing = SourceKind::WavFile("/nonexistent/x.wav".into());
    assert!(synth_source(&missing, 1.0, 0, SR).is_err());
}

#[test]
fn vad_trivial_cases() {
    let p = VadParams::default();
    assert!(vad(&Waveform::silence(8000, SR), p).iter().all(|&a| !a));
    let full = Waveform::new(vec![1.0; 8000], SR).unwrap();
    assert!(vad(&full, p).iter().all(|&a| a));
}

#[test]
fn vad_follows_tone_silence_tone() {
    // 0.3 s tone, 0.4 s silence, 0.3 s tone
    let mut x = tone(4800, 0.5);
    x.extend(vec![0.0; 6400]);
    x.extend(tone(4800, 0.5));
    let labels = vad(&Waveform::new(x, SR).unwrap(), VadParams::default());
    let (frame, hop) = (400, 160);
    for (t, &a) in labels.iter().enumerate() {
        let (s, e) = (t * hop, t * hop + frame);
        let touches_tone = s < 4800 || e > 11200;
        let inside_gap = s >= 4800 && e <= 11200;
        // truth: active iff the frame overlaps a tone; allow one frame of slack
        if a != touches_tone {
            let near = (s as i64 - 4800).abs() <= hop as i64 + frame as i64
                || (e as i64 - 11200).abs() <= hop as i64 + frame as i64;
            assert!(near, "frame {t} wrong far from a boundary");
        }
        if inside_gap {
            assert!(!a);
        }
    }
}

fn pair(seconds: f64) -> (Waveform, Waveform) {
    let a = synth_source(
        &SourceKind::SinusoidBand {
            lo: 200.0,
            hi: 800.0,
        },
        seconds,
        1,
        SR,
    )
    .unwrap();
    let b = synth_source(
        &SourceKind::SinusoidBand {
            lo: 2000.0,
            hi: 3500.0,
        },
        seconds,
        2,
        SR,
    )
    .unwrap();
    (a, b)
}

#[test]
fn sequential_mixture_has_no_overlap() {
    let (a, b) = pair(1.0);
    let m = mix(&a, &b, OverlapPattern::Sequential, 25.0, 3).unwrap();
    assert_eq!(m.overlap_ratio, 0.0);
    assert_eq!(m.overlap_class, OverlapClass::NonOverlap);
}

#[test]
fn full_mixture_overlaps_everywhere() {
    let (a, b) = pair(1.0);
    let m = mix(&a, &b, OverlapPattern::Full, 25.0, 3).unwrap();
    assert!((m.overlap_ratio - 1.0).abs() <= 0.02);
    assert_eq!(m.overlap_class, OverlapClass::Overlap);
    assert_eq!(m.mixture.len(), a.len());
}

#[test]
fn forty_percent_partial_overlap_measures_forty_percent() {
    let (a, b) = pair(3.0);
    let m = mix(&a, &b, OverlapPattern::Partial(0.4), 20.0, 4).unwrap();
    assert!((m.overlap_ratio - 0.4).abs() <= 0.02, "{}", m.overlap_ratio);
}

#[test]
fn impossible_ratio_is_rejected() {
    let (a, _) = pair(1.0);
    let (b, _) = pair(0.1);
    assert!(mix(&a, &b, OverlapPattern::Partial(0.5), 20.0, 0).is_err());
    assert!(mix(&a, &a, OverlapPattern::Partial(1.5), 20.0, 0).is_err());
}

#[test]
fn mixture_is_references_plus_noise() {
    let (a, b) = pair(0.5);
    let m = mix(&a, &b, OverlapPattern::Partial(0.5), 15.0, 9).unwrap();
    for n in 0..m.mixture.len() {
        let rebuilt =
            m.noise.samples()[n] + m.references[0].samples()[n] + m.references[1].samples()[n];
        assert_eq!(m.mixture.samples()[n], rebuilt);
        let residual =
            m.mixture.samples()[n] - m.references[0].samples()[n] - m.references[1].samples()[n];
        assert!((residual - m.noise.samples()[n]).abs() < 1e-15);
    }
}

#[test]
fn noise_hits_requested_snr() {
    let (a, b) = pair(0.5);
    for snr in [0.0, 7.5, 30.0] {
        let m = mix(&a, &b, OverlapPattern::Full, snr, 5).unwrap();
        let ps = m.speech().iter().map(|v| v * v).sum::<f64>();
        let pn = m.noise.energy();
        assert!((10.0 * (ps / pn).log10() - snr).abs() < 0.1);
    }
    let clean = mix(&a, &b, OverlapPattern::Full, f64::INFINITY, 5).unwrap();
    assert_eq!(clean.noise.energy(), 0.0);
}

#[test]
fn class_pure_batches() {
    let classes: Vec<OverlapClass> = (0..16)
        .map(|i| {
            if i % 2 == 0 {
                OverlapClass::Overlap
            } else {
                OverlapClass::NonOverlap
            }
        })
        .collect();
    let b = batch_indices(&classes, 4, true, 7).unwrap();
    assert_eq!(b.len(), 4);
    for batch in &b {
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|&i| classes[i] == classes[batch[0]]));
    }
    let mut all: Vec<usize> = b.concat();
    all.sort();
    assert_eq!(all, (0..16).collect::<Vec<_>>());
    assert_eq!(b, batch_indices(&classes, 4, true, 7).unwrap());
    assert_ne!(b, batch_indices(&classes, 4, true, 8).unwrap());
    assert_eq!(batch_indices(&classes, 5, false, 0).unwrap().len(), 4);
    assert!(batch_indices(&classes, 0, true, 0).is_err());
    // 3 overlap samples with batch 4: one short batch, still pure
    let short = batch_indices(&classes[..6], 4, true, 1).unwrap();
    assert_eq!(short.len(), 2);
}

#[test]
fn manifest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = DeskCorpus {
        source_seconds: 0.25,
        ..DeskCorpus::default()
    };
    let samples: Vec<_> = (0..3).map(|s| corpus.sample(s).unwrap()).collect();
    let path = write_dataset(dir.path(), &samples).unwrap();
    let recs = read_manifest(&path).unwrap();
    assert_eq!(recs.len(), 3);
    for (rec, s) in recs.iter().zip(&samples) {
        assert_eq!(rec.class, s.overlap_class);
        let back = load_sample(dir.path(), rec).unwrap();
        assert_eq!(back.mixture.len(), s.mixture.len());
        let err = back
            .mixture
            .samples()
            .iter()
            .zip(s.mixture.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0);
    }
    std::fs::write(&path, "{\"mixture_path\": 3}\n").unwrap();
    assert_eq!(
        read_manifest(&path).unwrap_err().category(),
        "manifest-invalid"
    );
}

#[test]
fn desk_sources_occupy_disjoint_bands() {
    let corpus = DeskCorpus::default();
    let m = corpus.sample_with(11, OverlapPattern::Full).unwrap();
    let fracs: Vec<f64> = m
        .references
        .iter()
        .map(|r| band_fraction(r, 100.0, 1000.0))
        .collect();
    assert!(fracs.iter().any(|&f| f > 0.95));
    assert!(fracs.iter().any(|&f| f < 0.05));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn label_matches_measured_ratio(seed in any::<u64>()) {
        let corpus = DeskCorpus { source_seconds: 0.4, ..DeskCorpus::default() };
        let m = corpus.sample(seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.overlap_ratio));
        prop_assert_eq!(m.overlap_class, class_of(m.overlap_ratio));
        let again = VadFrameLabels::from_references(&m.references, VadParams::default());
        prop_assert_eq!(again.overlap_ratio(), m.overlap_ratio);
        prop_assert!(again.counts.iter().all(|&c| c <= 2));
    }
}

#[test]
fn class_pure_desk_batches_alternate() {
    let corpus = DeskCorpus {
        source_seconds: 0.3,
        ..DeskCorpus::default()
    };
    for step in 1..5 {
        let b = corpus.batch(step, 3, true, 9).unwrap();
        let want = if step % 2 == 1 {
            OverlapClass::Overlap
        } else {
            OverlapClass::NonOverlap
        };
        assert!(b.iter().all(|s| s.overlap_class == want));
    }
    assert_eq!(
        corpus.batch(2, 2, false, 1).unwrap(),
        corpus.batch(2, 2, false, 1).unwrap()
    );
}
