use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::class::OverlapClass;
use crate::moe::aux_loss;
use crate::nn::gradcheck::{compare, MODEL_TOLERANCE};
use crate::nn::{Ctx, Gradients, Params, Scalar, Tensor};

fn tiny(moe: MoeVariant) -> ConformerConfig {
    ConformerConfig {
        num_blocks: 2,
        model_dim: 8,
        heads: 2,
        ffn_hidden: 12,
        conv_kernel: 3,
        moe,
        moe_block_stride: 2,
        num_speakers: 2,
        input_dim: 9,
        hop_length: 8,
        max_rel: 4,
    }
}

fn one_expert() -> ExpertConfig {
    ExpertConfig {
        experts: 1,
        capacity_factor: 1.5,
        jitter: 0.01,
        expert_dropout: 0.0,
    }
}

fn magnitudes(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::randn(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).map(f64::abs)
}

/// Copies dense weights into the matching expert-0 slots of a MoE model.
fn share_weights<T: Scalar>(dense: &Params<T>, moe: &mut Params<T>) {
    let names: Vec<String> = moe.iter().map(|(_, n, _)| n.to_owned()).collect();
    for name in names {
        let src = name.replace(".moe.experts.0.", ".ffn.");
        if let Some(t) = dense.by_name(&src) {
            moe.assign(&name, t.clone()).unwrap();
        }
    }
}

#[test]
fn zero_weight_block_is_identity() {
    let cfg = tiny(MoeVariant::Dense);
    let mut p = Params::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = ConformerBlock::new(&mut p, "b", &cfg, 0, &mut rng).unwrap();
    for t in p.values_mut() {
        t.fill(0.0);
    }
    let x = magnitudes(5, 8, 1);
    let out = block
        .forward(&p, &x, &mut Ctx::eval(vec![5]), None)
        .unwrap();
    assert_eq!(out.y, x);
    assert!(out.stats.is_none());
}

fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    (0..x.len())
        .map(|i| (x[i] - mu) * inv * g[i] + b[i])
        .collect()
}

fn lin(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|o| b[o] + (0..x.len()).map(|i| x[i] * w[i * out + o]).sum::<f64>())
        .collect()
}

#[test]
fn single_frame_block_matches_scalar_oracle() {
    let mut cfg = tiny(MoeVariant::Dense);
    cfg.model_dim = 2;
    cfg.heads = 1;
    cfg.ffn_hidden = 3;
    let mut p = Params::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let block = ConformerBlock::new(&mut p, "b", &cfg, 0, &mut rng).unwrap();
    // randomize everything, including norms and biases
    for t in p.values_mut() {
        *t = Tensor::randn(t.shape(), 0.7, &mut rng);
    }
    let x = [0.3, -1.1];
    let w = |n: &str| p.by_name(&format!("b.{n}")).unwrap().data().to_vec();

    let h = ln(&x, &w("mhsa_norm.gamma"), &w("mhsa_norm.beta"));
    // one frame attends only to itself
    let v = lin(&h, &w("mhsa.value.weight"), &w("mhsa.value.bias"));
    let a = lin(&v, &w("mhsa.out.weight"), &w("mhsa.out.bias"));
    let x1: Vec<f64> = (0..2).map(|i| x[i] + a[i]).collect();

    let h = ln(&x1, &w("conv_norm.gamma"), &w("conv_norm.beta"));
    let u = lin(
        &h,
        &w("conv.pointwise_in.weight"),
        &w("conv.pointwise_in.bias"),
    );
    let g: Vec<f64> = (0..2).map(|i| u[i] / (1.0 + (-u[2 + i]).exp())).collect();
    // zero padding leaves only the centre tap (row 1 of the 3×2 kernel)
    let dw = w("conv.depthwise.weight");
    let db = w("conv.depthwise.bias");
    let c: Vec<f64> = (0..2).map(|i| g[i] * dw[2 + i] + db[i]).collect();
    let c = ln(&c, &w("conv.norm.gamma"), &w("conv.norm.beta"));
    let s: Vec<f64> = c.iter().map(|v| v / (1.0 + (-v).exp())).collect();
    let o = lin(
        &s,
        &w("conv.pointwise_out.weight"),
        &w("conv.pointwise_out.bias"),
    );
    let x2: Vec<f64> = (0..2).map(|i| x1[i] + o[i]).collect();

    let h = ln(&x2, &w("ffn_norm.gamma"), &w("ffn_norm.beta"));
    let z: Vec<f64> = lin(&h, &w("ffn.fc1.weight"), &w("ffn.fc1.bias"))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let f = lin(&z, &w("ffn.fc2.weight"), &w("ffn.fc2.bias"));
    let expect: Vec<f64> = (0..2).map(|i| x2[i] + f[i]).collect();

    let xt = Tensor::from_vec(&[1, 2], x.to_vec()).unwrap();
    let out = block
        .forward(&p, &xt, &mut Ctx::eval(vec![1]), None)
        .unwrap();
    for i in 0..2 {
        assert!(
            (out.y.data()[i] - expect[i]).abs() < 1e-12,
            "{:?} vs {expect:?}",
            out.y
        );
    }
}

#[test]
fn single_expert_block_equals_dense_block() {
    let dense_cfg = tiny(MoeVariant::Dense);
    let moe_cfg = tiny(MoeVariant::Moe(one_expert()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pd = Params::<f64>::new();
    let dense = ConformerBlock::new(&mut pd, "b", &dense_cfg, 0, &mut rng).unwrap();
    let mut pm = Params::<f64>::new();
    let moe = ConformerBlock::new(&mut pm, "b", &moe_cfg, 0, &mut rng).unwrap();
    share_weights(&pd, &mut pm);
    let x = magnitudes(6, 8, 4);
    let a = dense
        .forward(&pd, &x, &mut Ctx::eval(vec![6]), None)
        .unwrap();
    let b = moe.forward(&pm, &x, &mut Ctx::eval(vec![6]), None).unwrap();
    let diff = a.y.zip_map(&b.y, |u, v| u - v).unwrap().max_abs();
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn masks_have_contract_shape_and_range() {
    for moe in [
        MoeVariant::Dense,
        MoeVariant::Moe(ExpertConfig::default()),
        MoeVariant::Mmoe(ExpertConfig::default()),
    ] {
        let cfg = tiny(moe);
        let (model, p) = SsModel::init::<f64>(cfg, 5).unwrap();
        let mag = magnitudes(7 + 4, 9, 6).map(|v| v * 20.0);
        let out = model
            .forward(
                &p,
                &mag,
                &mut Ctx::eval(vec![7, 4]),
                Some(OverlapClass::Overlap),
            )
            .unwrap();
        let sets = out.mask_sets(&[7, 4], 2).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(
            (sets[0].channels(), sets[0].frames(), sets[0].bins()),
            (2, 7, 9)
        );
        assert_eq!(sets[1].frames(), 4);
        assert!(out.masks.data().iter().all(|&m| (0.0..=1.0).contains(&m)));
    }
}

#[test]
fn rejects_bad_input() {
    let (model, p) = SsModel::init::<f64>(tiny(MoeVariant::Dense), 0).unwrap();
    let mut mag = magnitudes(3, 9, 0);
    assert!(model
        .forward(&p, &magnitudes(3, 8, 0), &mut Ctx::eval(vec![3]), None)
        .is_err());
    mag.set(1, 1, f64::NAN);
    let err = model
        .forward(&p, &mag, &mut Ctx::eval(vec![3]), None)
        .err()
        .unwrap();
    assert_eq!(err.category(), "non-finite");
}

#[test]
fn eval_is_deterministic() {
    let cfg = tiny(MoeVariant::Mmoe(ExpertConfig::default()));
    let (model, p) = SsModel::init::<f32>(cfg, 9).unwrap();
    let mag = magnitudes(10, 9, 1).cast::<f32>();
    let a = model.infer(&p, &mag).unwrap();
    let b = model.infer(&p, &mag).unwrap();
    assert_eq!(a, b);
}

#[test]
fn moe_blocks_sit_on_even_indices() {
    for n in 1..8 {
        let mut cfg = tiny(MoeVariant::Moe(ExpertConfig::default()));
        cfg.num_blocks = n;
        let (model, _) = SsModel::init::<f32>(cfg.clone(), 0).unwrap();
        let idx: Vec<usize> = model.moe_layers().map(|(i, _)| i).collect();
        assert_eq!(idx.len(), n.div_ceil(2));
        assert!(idx.iter().all(|i| i % 2 == 0));
        assert_eq!(idx, cfg.moe_blocks());
    }
}

#[test]
fn parameter_counts_follow_closed_form() {
    let dense_cfg = ConformerConfig::default();
    let moe_cfg = dense_cfg
        .clone()
        .with_moe(MoeVariant::Moe(ExpertConfig::default()));
    let mmoe_cfg = dense_cfg
        .clone()
        .with_moe(MoeVariant::Mmoe(ExpertConfig::default()));
    let (_, pd) = SsModel::init::<f32>(dense_cfg.clone(), 0).unwrap();
    let (_, pm) = SsModel::init::<f32>(moe_cfg.clone(), 0).unwrap();
    let (_, pmm) = SsModel::init::<f32>(mmoe_cfg.clone(), 0).unwrap();
    assert_eq!(pd.numel(), dense_cfg.param_count());
    assert_eq!(pm.numel(), moe_cfg.param_count());
    assert_eq!(pmm.numel(), mmoe_cfg.param_count());
    let (d, h, n) = (64, 128, 4);
    let ffn = d * h + h + h * d + d;
    let moe_blocks = 2;
    assert_eq!(
        pm.numel() - pd.numel(),
        (n - 1) * ffn * moe_blocks + d * n * moe_blocks
    );
    assert_eq!(pmm.numel() - pm.numel(), d * n * moe_blocks);
}

#[test]
fn moe_cost_delta_is_router_only() {
    let dense_cfg = ConformerConfig::default();
    let moe_cfg = dense_cfg
        .clone()
        .with_moe(MoeVariant::Moe(ExpertConfig::default()));
    let (dense, _) = SsModel::init::<f32>(dense_cfg, 0).unwrap();
    let (moe, _) = SsModel::init::<f32>(moe_cfg, 0).unwrap();
    for t in [1, 50, 300] {
        assert_eq!(
            moe.macs_per_token_at(t) - dense.macs_per_token_at(t),
            2 * 64 * 4
        );
    }
}

#[test]
fn config_file_roundtrip_and_overrides() {
    let cfg = ConformerConfig::default().with_moe(MoeVariant::Mmoe(ExpertConfig {
        experts: 3,
        ..ExpertConfig::default()
    }));
    let mut map = cfg.to_kv();
    let mut back = ConformerConfig::default();
    back.apply(&mut map).unwrap();
    assert!(map.is_empty());
    assert_eq!(back, cfg);

    let mut map = crate::config::KvMap::parse("conv_kernel = 4").unwrap();
    assert!(ConformerConfig::default().apply(&mut map).is_err());
    let mut map = crate::config::KvMap::parse("moe = dense").unwrap();
    assert!(ConformerConfig::default().apply(&mut map).is_err());
}

/// Loss `Σ masks ⊙ r + Σ_k w_k · L_aux,k` and its analytic gradient.
fn weighted_loss(
    model: &SsModel,
    p: &Params<f64>,
    mag: &Tensor<f64>,
    r: &Tensor<f64>,
    seed: u64,
) -> f64 {
    let out = model
        .forward(
            p,
            mag,
            &mut Ctx::train(seed, vec![4]),
            Some(OverlapClass::NonOverlap),
        )
        .unwrap();
    let mut l = out
        .masks
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    for s in &out.stats {
        l += 2.0 * aux_loss(s);
    }
    l
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    for moe in [
        MoeVariant::Dense,
        MoeVariant::Mmoe(ExpertConfig {
            experts: 3,
            ..ExpertConfig::default()
        }),
    ] {
        let (model, mut p) = SsModel::init::<f64>(tiny(moe), 11).unwrap();
        let mut mag = magnitudes(4, 9, 12).map(|v| v + 0.1);
        let r = Tensor::randn(&[4, 18], 1.0, &mut ChaCha8Rng::seed_from_u64(13));
        let out = model
            .forward(
                &p,
                &mag,
                &mut Ctx::train(14, vec![4]),
                Some(OverlapClass::NonOverlap),
            )
            .unwrap();
        let mut g = Gradients::zeros_like(&p);
        let coefs = vec![2.0; out.stats.len()];
        let dx = model.backward(&p, out.cache, &r, &coefs, &mut g).unwrap();
        let report = compare(
            "model",
            MODEL_TOLERANCE,
            &mut p,
            &mut mag,
            &g,
            Some(&dx),
            |p, x| weighted_loss(&model, p, x, &r, 14),
        );
        assert!(report.passed(), "{moe:?}: {}", report.max_rel_error);
    }
}

#[test]
fn single_expert_model_equals_dense_model_with_gradients() {
    let (dense, pd) = SsModel::init::<f64>(tiny(MoeVariant::Dense), 21).unwrap();
    let (moe, mut pm) = SsModel::init::<f64>(tiny(MoeVariant::Moe(one_expert())), 22).unwrap();
    share_weights(&pd, &mut pm);
    let mag = magnitudes(5 + 3, 9, 23);
    let r = Tensor::randn(&[8, 18], 1.0, &mut ChaCha8Rng::seed_from_u64(24));
    let run = |m: &SsModel, p: &Params<f64>| {
        let out = m
            .forward(p, &mag, &mut Ctx::train(25, vec![5, 3]), None)
            .unwrap();
        let mut g = Gradients::zeros_like(p);
        let coefs = vec![1.0; out.stats.len()];
        let masks = out.masks.clone();
        m.backward(p, out.cache, &r, &coefs, &mut g).unwrap();
        (masks, g)
    };
    let (ma, ga) = run(&dense, &pd);
    let (mb, gb) = run(&moe, &pm);
    assert!(ma.zip_map(&mb, |a, b| a - b).unwrap().max_abs() <= 1e-5);
    for (id, name, _) in pm.iter() {
        let src = name.replace(".moe.experts.0.", ".ffn.");
        match pd.id(&src) {
            Some(did) => {
                let diff = ga
                    .get(did)
                    .zip_map(gb.get(id), |a, b| a - b)
                    .unwrap()
                    .max_abs();
                assert!(diff <= 1e-5, "{name}: {diff}");
            }
            None => assert!(name.ends_with("router")),
        }
    }
}
