use rand::Rng;

use super::config::ConformerConfig;
use crate::class::OverlapClass;
use crate::error::{Error, Result};
use crate::moe::{
    FeedForward, FeedForwardCache, LoadStats, MoeCache, MoeLayer, MoeShape, RoutingDecision,
    DEFAULT_ALPHA,
};
use crate::nn::attention::MhsaCache;
use crate::nn::conv::ConvCache;
use crate::nn::layers::{ActivationCache, Layer, LayerNormCache};
use crate::nn::{
    Activation, Ctx, DepthwiseConv1d, Glu, Gradients, LayerNorm, Linear, Params, RelPosMhsa,
    Scalar, Tensor,
};

/// `pointwise(D→2D) → GLU → depthwise(K) → LayerNorm → Swish → pointwise(D→D)`.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub pointwise_in: Linear,
    pub depthwise: DepthwiseConv1d,
    pub norm: LayerNorm,
    pub pointwise_out: Linear,
}

pub struct ConvModuleCache<T> {
    pw_in: Tensor<T>,
    glu: Tensor<T>,
    dw: ConvCache<T>,
    norm: LayerNormCache<T>,
    act: ActivationCache<T>,
    pw_out: Tensor<T>,
}

impl ConvModule {
    fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        dim: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            pointwise_in: Linear::new(
                params,
                &format!("{name}.pointwise_in"),
                dim,
                2 * dim,
                true,
                rng,
            )?,
            depthwise: DepthwiseConv1d::new(
                params,
                &format!("{name}.depthwise"),
                dim,
                kernel,
                rng,
            )?,
            norm: LayerNorm::new(params, &format!("{name}.norm"), dim)?,
            pointwise_out: Linear::new(
                params,
                &format!("{name}.pointwise_out"),
                dim,
                dim,
                true,
                rng,
            )?,
        })
    }
}

impl<T: Scalar> Layer<T> for ConvModule {
    type Cache = ConvModuleCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        let (h, pw_in) = self.pointwise_in.forward(params, x, ctx)?;
        let (h, glu) = Glu.forward(params, &h, ctx)?;
        let (h, dw) = self.depthwise.forward(params, &h, ctx)?;
        let (h, norm) = self.norm.forward(params, &h, ctx)?;
        let (h, act) = Activation::Swish.forward(params, &h, ctx)?;
        let (y, pw_out) = self.pointwise_out.forward(params, &h, ctx)?;
        let cache = match (pw_in, glu, dw, norm, act, pw_out) {
            (Some(pw_in), Some(glu), Some(dw), Some(norm), Some(act), Some(pw_out)) => {
                Some(ConvModuleCache {
                    pw_in,
                    glu,
                    dw,
                    norm,
                    act,
                    pw_out,
                })
            }
            _ => None,
        };
        Ok((y, cache))
    }

    fn backward(
        &self,
        params: &Params<T>,
        cache: Option<Self::Cache>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let c = cache.ok_or(Error::MissingContext)?;
        let g = self
            .pointwise_out
            .backward(params, Some(c.pw_out), grad_out, grads)?;
        let g = Activation::Swish.backward(params, Some(c.act), &g, grads)?;
        let g = self.norm.backward(params, Some(c.norm), &g, grads)?;
        let g = self.depthwise.backward(params, Some(c.dw), &g, grads)?;
        let g = Glu.backward(params, Some(c.glu), &g, grads)?;
        self.pointwise_in.backward(params, Some(c.pw_in), &g, grads)
    }

    fn macs_per_token(&self) -> usize {
        Layer::<f32>::macs_per_token(&self.pointwise_in)
            + Layer::<f32>::macs_per_token(&self.depthwise)
            + Layer::<f32>::macs_per_token(&self.pointwise_out)
    }
}

#[derive(Clone, Debug)]
pub enum FfnModule {
    Dense(FeedForward),
    Moe(MoeLayer),
}

pub enum FfnCache<T> {
    Dense(FeedForwardCache<T>),
    Moe(MoeCache<T>),
}

impl FfnModule {
    pub fn macs_per_token(&self) -> usize {
        match self {
            FfnModule::Dense(f) => f.macs_per_token(),
            FfnModule::Moe(m) => m.macs_per_token(),
        }
    }

    pub fn as_moe(&self) -> Option<&MoeLayer> {
        match self {
            FfnModule::Moe(m) => Some(m),
            FfnModule::Dense(_) => None,
        }
    }
}

/// One block: three pre-norm residual modules, MHSA → conv → FFN or MoE.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub mhsa_norm: LayerNorm,
    pub mhsa: RelPosMhsa,
    pub conv_norm: LayerNorm,
    pub conv: ConvModule,
    pub ffn_norm: LayerNorm,
    pub ffn: FfnModule,
}

pub struct BlockCache<T> {
    mhsa_norm: LayerNormCache<T>,
    mhsa: MhsaCache<T>,
    conv_norm: LayerNormCache<T>,
    conv: ConvModuleCache<T>,
    ffn_norm: LayerNormCache<T>,
    ffn: FfnCache<T>,
}

pub struct BlockOutput<T> {
    pub y: Tensor<T>,
    pub stats: Option<LoadStats>,
    pub decision: Option<RoutingDecision<T>>,
    pub cache: Option<BlockCache<T>>,
}

impl ConformerBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        cfg: &ConformerConfig,
        index: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        let mhsa_norm = LayerNorm::new(params, &format!("{name}.mhsa_norm"), d)?;
        let mhsa = RelPosMhsa::new(
            params,
            &format!("{name}.mhsa"),
            d,
            cfg.heads,
            Some(cfg.max_rel),
            rng,
        )?;
        let conv_norm = LayerNorm::new(params, &format!("{name}.conv_norm"), d)?;
        let conv = ConvModule::new(params, &format!("{name}.conv"), d, cfg.conv_kernel, rng)?;
        let ffn_norm = LayerNorm::new(params, &format!("{name}.ffn_norm"), d)?;
        let ffn = match cfg.moe.experts() {
            Some(e) if cfg.is_moe_block(index) => {
                let shape = MoeShape {
                    dim: d,
                    hidden: cfg.ffn_hidden,
                    n_experts: e.experts,
                    capacity_factor: e.capacity_factor,
                    jitter: e.jitter,
                    expert_dropout: e.expert_dropout,
                    alpha: DEFAULT_ALPHA,
                    multi_gate: cfg.moe.is_multi_gate(),
                };
                FfnModule::Moe(MoeLayer::new(params, &format!("{name}.moe"), shape, rng)?)
            }
            _ => FfnModule::Dense(FeedForward::new(
                params,
                &format!("{name}.ffn"),
                d,
                cfg.ffn_hidden,
                0.0,
                rng,
            )?),
        };
        Ok(Self {
            mhsa_norm,
            mhsa,
            conv_norm,
            conv,
            ffn_norm,
            ffn,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
        class: Option<OverlapClass>,
    ) -> Result<BlockOutput<T>> {
        let (h, mhsa_norm) = self.mhsa_norm.forward(params, x, ctx)?;
        let (mut a, mhsa) = self.mhsa.forward(params, &h, ctx)?;
        a.add_assign(x)?;
        let (h, conv_norm) = self.conv_norm.forward(params, &a, ctx)?;
        let (mut b, conv) = self.conv.forward(params, &h, ctx)?;
        b.add_assign(&a)?;
        let (h, ffn_norm) = self.ffn_norm.forward(params, &b, ctx)?;
        let (mut y, ffn, stats, decision) = match &self.ffn {
            FfnModule::Dense(f) => {
                let (y, c) = f.forward(params, &h, ctx)?;
                (y, c.map(FfnCache::Dense), None, None)
            }
            FfnModule::Moe(m) => {
                let out = m.forward(params, &h, ctx, class)?;
                (
                    out.y,
                    out.cache.map(FfnCache::Moe),
                    Some(out.stats),
                    Some(out.decision),
                )
            }
        };
        y.add_assign(&b)?;
        let cache = match (mhsa_norm, mhsa, conv_norm, conv, ffn_norm, ffn) {
            (
                Some(mhsa_norm),
                Some(mhsa),
                Some(conv_norm),
                Some(conv),
                Some(ffn_norm),
                Some(ffn),
            ) => Some(BlockCache {
                mhsa_norm,
                mhsa,
                conv_norm,
                conv,
                ffn_norm,
                ffn,
            }),
            _ => None,
        };
        Ok(BlockOutput {
            y,
            stats,
            decision,
            cache,
        })
    }

    /// `aux_coef` is the loss weight on this block's load-balancing term.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: Option<BlockCache<T>>,
        grad_out: &Tensor<T>,
        aux_coef: T,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let c = cache.ok_or(Error::MissingContext)?;
        let g = match (&self.ffn, c.ffn) {
            (FfnModule::Dense(f), FfnCache::Dense(fc)) => {
                f.backward(params, Some(fc), grad_out, grads)?
            }
            (FfnModule::Moe(m), FfnCache::Moe(mc)) => {
                m.backward(params, Some(mc), grad_out, aux_coef, grads)?
            }
            _ => return Err(Error::MissingContext),
        };
        let mut db = self
            .ffn_norm
            .backward(params, Some(c.ffn_norm), &g, grads)?;
        db.add_assign(grad_out)?;
        let g = self.conv.backward(params, Some(c.conv), &db, grads)?;
        let mut da = self
            .conv_norm
            .backward(params, Some(c.conv_norm), &g, grads)?;
        da.add_assign(&db)?;
        let g = self.mhsa.backward(params, Some(c.mhsa), &da, grads)?;
        let mut dx = self
            .mhsa_norm
            .backward(params, Some(c.mhsa_norm), &g, grads)?;
        dx.add_assign(&da)?;
        Ok(dx)
    }

    /// Multiply-accumulates per token for a sequence of `seq_len` frames.
    pub fn macs_per_token_at(&self, seq_len: usize) -> usize {
        self.mhsa.macs_per_token_at(seq_len)
            + Layer::<f32>::macs_per_token(&self.conv)
            + self.ffn.macs_per_token()
    }
}
