use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{aux_weights, moe_loss, AuxReduction};
use super::upit::upit_loss;
use crate::class::OverlapClass;
use crate::conformer::{ConformerConfig, ExpertConfig, MoeVariant, SsModel};
use crate::dsp::MelFilterbank;
use crate::error::Result;
use crate::nn::gradcheck::{compare, GradCheckReport, MODEL_TOLERANCE};
use crate::nn::{Ctx, Gradients, Params, Tensor};

/// Two-block, 8-wide two-gate model on 9-bin frames.
pub fn tiny_config() -> ConformerConfig {
    ConformerConfig {
        num_blocks: 2,
        model_dim: 8,
        heads: 2,
        ffn_hidden: 12,
        conv_kernel: 3,
        moe: MoeVariant::Mmoe(ExpertConfig {
            experts: 3,
            ..ExpertConfig::default()
        }),
        moe_block_stride: 2,
        num_speakers: 2,
        input_dim: 9,
        hop_length: 8,
        max_rel: 4,
    }
}

struct Problem {
    model: SsModel,
    fb: MelFilterbank,
    refs: Vec<Tensor<f64>>,
    frames: usize,
    seed: u64,
}

impl Problem {
    fn loss(&self, p: &Params<f64>, mag: &Tensor<f64>) -> Result<f64> {
        let mut ctx = Ctx::train(self.seed, vec![self.frames]);
        let out = self
            .model
            .forward(p, mag, &mut ctx, Some(OverlapClass::Overlap))?;
        let sets = out.mask_sets(&[self.frames], 2)?;
        let u = upit_loss(&sets[0], mag, &self.refs, &self.fb)?;
        Ok(u.loss + moe_loss(&out.stats, AuxReduction::Mean))
    }
}

/// Full-model check: uPIT plus load-balancing loss through every parameter
/// and the input magnitudes, 64-bit, 4 frames.
pub fn model_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config();
    let (model, mut params) = SsModel::init::<f64>(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let frames = 4;
    let positive = |t: Tensor<f64>| t.map(|v| v.abs() + 0.1);
    let mut mag = positive(Tensor::randn(&[frames, 9], 1.0, &mut rng));
    let refs = vec![
        positive(Tensor::randn(&[frames, 9], 0.5, &mut rng)),
        positive(Tensor::randn(&[frames, 9], 0.5, &mut rng)),
    ];
    let fb = MelFilterbank::new(16_000, 16, 4, 0.0, 8_000.0)?;
    let problem = Problem {
        model,
        fb,
        refs,
        frames,
        seed,
    };

    let mut ctx = Ctx::train(seed, vec![frames]);
    let out = problem
        .model
        .forward(&params, &mag, &mut ctx, Some(OverlapClass::Overlap))?;
    let sets = out.mask_sets(&[frames], 2)?;
    let u = upit_loss(&sets[0], &mag, &problem.refs, &problem.fb)?;
    let mut dmasks = Tensor::zeros(out.masks.shape());
    for (i, g) in u.grads.iter().enumerate() {
        for t in 0..frames {
            dmasks.row_mut(t)[i * 9..(i + 1) * 9].copy_from_slice(g.row(t));
        }
    }
    let coefs = aux_weights(&out.stats, AuxReduction::Mean);
    let mut grads = Gradients::zeros_like(&params);
    let mut dmag = problem
        .model
        .backward(&params, out.cache, &dmasks, &coefs, &mut grads)?;
    // the loss also reads |Y| directly through M ⊙ |Y|
    for (i, g) in u.grads.iter().enumerate() {
        let m = sets[0].get(i);
        for k in 0..dmag.len() {
            let y = mag.data()[k];
            if y != 0.0 {
                dmag.data_mut()[k] += g.data()[k] * m.data()[k] / y;
            }
        }
    }
    Ok(compare(
        "model",
        MODEL_TOLERANCE,
        &mut params,
        &mut mag,
        &grads,
        Some(&dmag),
        |p, x| problem.loss(p, x).unwrap_or(f64::NAN),
    ))
}
