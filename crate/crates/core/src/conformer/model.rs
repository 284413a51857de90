use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{BlockCache, ConformerBlock};
use super::config::ConformerConfig;
use crate::class::OverlapClass;
use crate::dsp::{Framing, MaskSet};
use crate::error::{shape_err, Error, Result};
use crate::moe::{LoadStats, MoeLayer, RoutingDecision};
use crate::nn::layers::Layer;
use crate::nn::{sigmoid, Ctx, Gradients, Linear, Params, Scalar, Tensor};

/// Mask estimator: `log(1 + |Y|) → linear(F→D) → blocks → linear(D→S·F) → σ`.
#[derive(Clone, Debug)]
pub struct SsModel {
    pub config: ConformerConfig,
    pub input: Linear,
    pub blocks: Vec<ConformerBlock>,
    pub output: Linear,
}

pub struct ModelCache<T> {
    mag: Tensor<T>,
    input: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    output: Tensor<T>,
    masks: Tensor<T>,
}

pub struct ModelOutput<T> {
    /// Stacked masks `[tokens × S·F]`; speaker `s` owns columns `s·F..(s+1)·F`.
    pub masks: Tensor<T>,
    /// Per MoE block, in block order.
    pub stats: Vec<LoadStats>,
    pub decisions: Vec<(usize, RoutingDecision<T>)>,
    pub cache: Option<ModelCache<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    /// Token-weighted aggregate over MoE blocks.
    pub fn load(&self) -> Option<LoadStats> {
        LoadStats::aggregate(&self.stats)
    }

    /// Splits the stacked masks back into per-sample [`MaskSet`]s.
    pub fn mask_sets(&self, segments: &[usize], speakers: usize) -> Result<Vec<MaskSet<T>>> {
        split_masks(&self.masks, segments, speakers)
    }
}

pub fn split_masks<T: Scalar>(
    masks: &Tensor<T>,
    segments: &[usize],
    speakers: usize,
) -> Result<Vec<MaskSet<T>>> {
    let bins = masks.cols() / speakers;
    let mut start = 0;
    let mut out = Vec::with_capacity(segments.len());
    for &len in segments {
        let rows = masks.slice_rows(start, len);
        let per: Vec<_> = (0..speakers)
            .map(|s| rows.slice_cols(s * bins, bins))
            .collect();
        out.push(MaskSet::new(per)?);
        start += len;
    }
    Ok(out)
}

impl SsModel {
    pub fn new<T: Scalar>(
        params: &mut Params<T>,
        config: ConformerConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let f = config.input_dim;
        let input = Linear::new(params, "input", f, d, true, &mut rng)?;
        let blocks = (0..config.num_blocks)
            .map(|i| ConformerBlock::new(params, &format!("blocks.{i}"), &config, i, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new(params, "output", d, config.num_speakers * f, true, &mut rng)?;
        Ok(Self {
            config,
            input,
            blocks,
            output,
        })
    }

    /// Fresh parameters and model together.
    pub fn init<T: Scalar>(config: ConformerConfig, seed: u64) -> Result<(Self, Params<T>)> {
        let mut params = Params::new();
        let model = Self::new(&mut params, config, seed)?;
        Ok((model, params))
    }

    pub fn framing(&self) -> Result<Framing> {
        Framing::new(self.config.frame_length(), self.config.hop_length)
    }

    pub fn moe_layers(&self) -> impl Iterator<Item = (usize, &MoeLayer)> {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.ffn.as_moe().map(|m| (i, m)))
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        for b in &mut self.blocks {
            if let super::block::FfnModule::Moe(m) = &mut b.ffn {
                m.alpha = alpha;
            }
        }
    }

    /// `mag` holds stacked magnitude frames for the segments in `ctx`.
    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        mag: &Tensor<T>,
        ctx: &mut Ctx,
        class: Option<OverlapClass>,
    ) -> Result<ModelOutput<T>> {
        if mag.cols() != self.config.input_dim {
            return shape_err(format!(
                "expected {} frequency bins, got {}",
                self.config.input_dim,
                mag.cols()
            ));
        }
        ctx.check_tokens(mag)?;
        if !mag.all_finite() {
            return Err(Error::NonFinite("magnitude input"));
        }
        let feat = mag.map(|v| v.max(T::zero()).ln_1p());
        let (mut h, input) = self.input.forward(params, &feat, ctx)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::new();
        let mut decisions = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let out = block.forward(params, &h, ctx, class)?;
            h = out.y;
            caches.extend(out.cache);
            stats.extend(out.stats);
            if let Some(d) = out.decision {
                decisions.push((i, d));
            }
        }
        let (logits, output) = self.output.forward(params, &h, ctx)?;
        let masks = logits.map(sigmoid);
        let cache = match (input, output) {
            (Some(input), Some(output)) if caches.len() == self.blocks.len() => Some(ModelCache {
                mag: mag.clone(),
                input,
                blocks: caches,
                output,
                masks: masks.clone(),
            }),
            _ => None,
        };
        Ok(ModelOutput {
            masks,
            stats,
            decisions,
            cache,
        })
    }

    /// Backpropagates `∂loss/∂masks`. `aux_coefs[k]` weights the load loss of
    /// the `k`-th MoE block. Returns the gradient w.r.t. the magnitudes.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: Option<ModelCache<T>>,
        grad_masks: &Tensor<T>,
        aux_coefs: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let c = cache.ok_or(Error::MissingContext)?;
        grad_masks.same_shape(&c.masks)?;
        let n_moe = self.moe_layers().count();
        if aux_coefs.len() != n_moe {
            return shape_err(format!(
                "{} aux weights for {n_moe} MoE blocks",
                aux_coefs.len()
            ));
        }
        let dlogits = c.masks.zip_map(grad_masks, |m, g| g * m * (T::one() - m))?;
        let mut g = self
            .output
            .backward(params, Some(c.output), &dlogits, grads)?;
        let mut k = n_moe;
        for (block, bc) in self.blocks.iter().zip(c.blocks).rev() {
            let coef = if block.ffn.as_moe().is_some() {
                k -= 1;
                aux_coefs[k]
            } else {
                T::zero()
            };
            g = block.backward(params, Some(bc), &g, coef, grads)?;
        }
        let dfeat = self.input.backward(params, Some(c.input), &g, grads)?;
        dfeat.zip_map(&c.mag, |d, m| {
            if m > T::zero() {
                d / (T::one() + m)
            } else {
                T::zero()
            }
        })
    }

    /// Multiply-accumulates per frame for sequences of `seq_len` frames.
    pub fn macs_per_token_at(&self, seq_len: usize) -> usize {
        Layer::<f32>::macs_per_token(&self.input)
            + self
                .blocks
                .iter()
                .map(|b| b.macs_per_token_at(seq_len))
                .sum::<usize>()
            + Layer::<f32>::macs_per_token(&self.output)
    }

    /// Eval-mode masks for one magnitude spectrogram `[T × F]`.
    pub fn infer<T: Scalar>(&self, params: &Params<T>, mag: &Tensor<T>) -> Result<MaskSet<T>> {
        let mut ctx = Ctx::eval(vec![mag.rows()]);
        let out = self.forward(params, mag, &mut ctx, None)?;
        let mut sets = out.mask_sets(&[mag.rows()], self.config.num_speakers)?;
        Ok(sets.remove(0))
    }
}
