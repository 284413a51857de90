use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conformer::{ConformerConfig, ExpertConfig, MoeVariant, SsModel};
use crate::dsp::Waveform;
use crate::nn::Tensor;
use crate::train::permutations;

#[test]
fn ten_seconds_gives_eleven_windows() {
    let plan = WindowPlan::from_seconds(160_000, 2.4, 0.8, 16_000).unwrap();
    assert_eq!(plan.len(), 11);
    let expect: Vec<usize> = (0..11).map(|k| k * 12_800).collect();
    assert_eq!(plan.offsets, expect);
    // ten full windows, the eleventh padded past 10 s
    let full = plan
        .offsets
        .iter()
        .filter(|&&o| o + plan.window <= plan.total)
        .count();
    assert_eq!(full, 10);
    assert!(plan.offsets[10] + plan.window >= plan.total);
}

#[test]
fn short_audio_and_disjoint_tiling() {
    assert_eq!(WindowPlan::new(100, 400, 100).unwrap().offsets, vec![0]);
    let tiles = WindowPlan::new(1000, 250, 250).unwrap();
    assert_eq!(tiles.offsets, vec![0, 250, 500, 750]);
    assert_eq!(tiles.overlap(), 0);
    assert!(WindowPlan::new(0, 10, 5).is_err());
    assert!(WindowPlan::new(10, 5, 6).is_err());
}

fn rand_mags(s: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    (0..s)
        .map(|_| Tensor::uniform(&[20, 9], 1.0, rng).map(f64::abs))
        .collect()
}

#[test]
fn alignment_identity_and_swap() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let prev = rand_mags(2, &mut rng);
    assert_eq!(align_permutation(&prev, &prev).unwrap(), vec![0, 1]);
    let swapped = vec![prev[1].clone(), prev[0].clone()];
    assert_eq!(align_permutation(&prev, &swapped).unwrap(), vec![1, 0]);
}

#[test]
fn planted_permutation_recovered_at_ten_db() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = rand_mags(2, &mut rng);
        let planted = if rng.random_bool(0.5) {
            vec![0, 1]
        } else {
            vec![1, 0]
        };
        let cur: Vec<Tensor<f64>> = (0..2)
            .map(|j| {
                // cur[j] holds prev[i] where planted[i] == j
                let i = planted.iter().position(|&p| p == j).unwrap();
                let src = &prev[i];
                let power = src.sum_sq() / src.len() as f64;
                let noise = Tensor::randn(src.shape(), (power / 10.0).sqrt(), &mut rng);
                src.zip_map(&noise, |a, b| a + b).unwrap()
            })
            .collect();
        if align_permutation(&prev, &cur).unwrap() == planted {
            hits += 1;
        }
    }
    assert!(hits >= 99, "{hits}/100");
}

proptest! {
    #[test]
    fn alignment_is_exhaustive_argmin_for_three(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = rand_mags(3, &mut rng);
        let cur = rand_mags(3, &mut rng);
        let got = align_permutation(&prev, &cur).unwrap();
        let score = |p: &[usize]| -> f64 {
            p.iter().enumerate().map(|(i, &j)| prev[i].zip_map(&cur[j], |a, b| a - b).unwrap().sum_sq()).sum()
        };
        let best = permutations(3).iter().map(|p| score(p)).fold(f64::INFINITY, f64::min);
        prop_assert!(score(&got) <= best + 1e-12);
    }

    #[test]
    fn equal_windows_stitch_to_the_same_signal(len in 50usize..400, w in 20usize..60, h in 5usize..20, seed in any::<u64>()) {
        let h = h.min(w);
        let plan = WindowPlan::new(len, w, h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal: Vec<f64> = (0..len + w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let windows: Vec<Vec<Vec<f64>>> = plan
            .offsets
            .iter()
            .map(|&o| vec![signal[o..o + w].to_vec()])
            .collect();
        let out = stitch(&windows, &plan, 16_000).unwrap();
        prop_assert_eq!(out[0].len(), len);
        let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (n, v) in out[0].samples().iter().enumerate() {
            prop_assert!((v - signal[n]).abs() < 1e-12);
            prop_assert!(v.abs() <= peak * (1.0 + 1e-6));
        }
    }
}

#[test]
fn single_window_passes_through() {
    let plan = WindowPlan::new(30, 40, 10).unwrap();
    let win = vec![(0..40).map(|v| v as f64).collect::<Vec<_>>(), vec![1.0; 40]];
    let out = stitch(std::slice::from_ref(&win), &plan, 16_000).unwrap();
    assert_eq!(out[0].samples(), &win[0][..30]);
    assert_eq!(out[1].samples(), &win[1][..30]);
}

#[test]
fn two_windows_crossfade_by_hand() {
    // window 4, hop 2: samples 2 and 3 are shared
    let plan = WindowPlan::new(6, 4, 2).unwrap();
    assert_eq!(plan.offsets, vec![0, 2]);
    let a = vec![vec![1.0; 4]];
    let b = vec![vec![5.0; 4]];
    let out = stitch(&[a, b], &plan, 16_000).unwrap();
    let expect = [
        1.0,
        1.0,
        0.75 * 1.0 + 0.25 * 5.0,
        0.25 * 1.0 + 0.75 * 5.0,
        5.0,
        5.0,
    ];
    for (v, e) in out[0].samples().iter().zip(expect) {
        assert!((v - e).abs() < 1e-15);
    }
}

fn small_model() -> (SsModel, crate::nn::Params<f32>) {
    let cfg = ConformerConfig {
        num_blocks: 2,
        model_dim: 16,
        heads: 2,
        ffn_hidden: 32,
        conv_kernel: 3,
        moe: MoeVariant::Moe(ExpertConfig::default()),
        moe_block_stride: 2,
        num_speakers: 2,
        input_dim: 65,
        hop_length: 32,
        max_rel: 8,
    };
    SsModel::init(cfg, 4).unwrap()
}

#[test]
fn silence_in_silence_out() {
    let (model, params) = small_model();
    let plan = WindowPlan::new(5000, 1600, 800).unwrap();
    let out = separate_long(&model, &params, &Waveform::silence(5000, 16_000), &plan).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|w| w.len() == 5000 && w.energy() == 0.0));
}

#[test]
fn lengths_are_preserved() {
    let (model, params) = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in [1, 799, 1600, 4321] {
        let audio = Waveform::new(
            (0..len).map(|_| rng.random_range(-0.3..0.3)).collect(),
            16_000,
        )
        .unwrap();
        let plan = WindowPlan::new(len, 1600, 800).unwrap();
        for w in separate_long(&model, &params, &audio, &plan).unwrap() {
            assert_eq!(w.len(), len);
        }
    }
}

#[test]
fn one_window_equals_single_pass() {
    let (model, params) = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let audio = Waveform::new(
        (0..1600).map(|_| rng.random_range(-0.3..0.3)).collect(),
        16_000,
    )
    .unwrap();
    let plan = WindowPlan::new(1600, 1600, 800).unwrap();
    let long = separate_long(&model, &params, &audio, &plan).unwrap();
    let once = separate_once(&model, &params, &audio).unwrap();
    assert_eq!(long, once.signals);
}
