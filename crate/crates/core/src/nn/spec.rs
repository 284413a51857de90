use rand::Rng;

use super::attention::{MhsaCache, RelPosMhsa};
use super::conv::{ConvCache, DepthwiseConv1d};
use super::layers::{
    Activation, ActivationCache, Ctx, Dropout, Glu, Layer, LayerNorm, LayerNormCache, Linear,
};
use super::{Gradients, Params, Scalar, Tensor};
use crate::error::{invalid, Error, Result};

/// Declarative description of a single layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Linear {
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    },
    LayerNorm {
        dim: usize,
    },
    MhsaRelPos {
        dim: usize,
        heads: usize,
        max_rel: Option<usize>,
    },
    DepthwiseConv {
        channels: usize,
        kernel: usize,
    },
    Activation(Activation),
    Dropout {
        p: f64,
    },
    Glu,
}

impl LayerSpec {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut Params<T>,
        name: &str,
        rng: &mut R,
    ) -> Result<AnyLayer> {
        Ok(match *self {
            LayerSpec::Linear {
                in_dim,
                out_dim,
                bias,
            } => AnyLayer::Linear(Linear::new(params, name, in_dim, out_dim, bias, rng)?),
            LayerSpec::LayerNorm { dim } => AnyLayer::LayerNorm(LayerNorm::new(params, name, dim)?),
            LayerSpec::MhsaRelPos {
                dim,
                heads,
                max_rel,
            } => AnyLayer::Mhsa(RelPosMhsa::new(params, name, dim, heads, max_rel, rng)?),
            LayerSpec::DepthwiseConv { channels, kernel } => {
                AnyLayer::Conv(DepthwiseConv1d::new(params, name, channels, kernel, rng)?)
            }
            LayerSpec::Activation(a) => AnyLayer::Activation(a),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return invalid(format!("dropout rate {p} outside [0, 1)"));
                }
                AnyLayer::Dropout(Dropout { p })
            }
            LayerSpec::Glu => AnyLayer::Glu,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::LayerNorm { .. } => "layernorm",
            LayerSpec::MhsaRelPos { .. } => "mhsa_relpos",
            LayerSpec::DepthwiseConv { .. } => "depthwise_conv",
            LayerSpec::Activation(Activation::Relu) => "relu",
            LayerSpec::Activation(Activation::Swish) => "swish",
            LayerSpec::Activation(Activation::Sigmoid) => "sigmoid",
            LayerSpec::Activation(Activation::Softmax) => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Glu => "glu",
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyLayer {
    Linear(Linear),
    LayerNorm(LayerNorm),
    Mhsa(RelPosMhsa),
    Conv(DepthwiseConv1d),
    Activation(Activation),
    Dropout(Dropout),
    Glu,
}

#[derive(Clone, Debug)]
pub enum AnyCache<T> {
    Linear(Tensor<T>),
    LayerNorm(LayerNormCache<T>),
    Mhsa(MhsaCache<T>),
    Conv(ConvCache<T>),
    Activation(ActivationCache<T>),
    Dropout(Option<Tensor<T>>),
    Glu(Tensor<T>),
}

impl<T: Scalar> Layer<T> for AnyLayer {
    type Cache = AnyCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<AnyCache<T>>)> {
        fn wrap<T, C>(
            r: Result<(Tensor<T>, Option<C>)>,
            f: impl FnOnce(C) -> AnyCache<T>,
        ) -> Result<(Tensor<T>, Option<AnyCache<T>>)> {
            r.map(|(y, c)| (y, c.map(f)))
        }
        match self {
            AnyLayer::Linear(l) => wrap(l.forward(params, x, ctx), AnyCache::Linear),
            AnyLayer::LayerNorm(l) => wrap(l.forward(params, x, ctx), AnyCache::LayerNorm),
            AnyLayer::Mhsa(l) => wrap(l.forward(params, x, ctx), AnyCache::Mhsa),
            AnyLayer::Conv(l) => wrap(l.forward(params, x, ctx), AnyCache::Conv),
            AnyLayer::Activation(l) => wrap(l.forward(params, x, ctx), AnyCache::Activation),
            AnyLayer::Dropout(l) => wrap(l.forward(params, x, ctx), AnyCache::Dropout),
            AnyLayer::Glu => wrap(Glu.forward(params, x, ctx), AnyCache::Glu),
        }
    }

    fn backward(
        &self,
        params: &Params<T>,
        cache: Option<AnyCache<T>>,
        g: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let cache = cache.ok_or(Error::MissingContext)?;
        match (self, cache) {
            (AnyLayer::Linear(l), AnyCache::Linear(c)) => l.backward(params, Some(c), g, grads),
            (AnyLayer::LayerNorm(l), AnyCache::LayerNorm(c)) => {
                l.backward(params, Some(c), g, grads)
            }
            (AnyLayer::Mhsa(l), AnyCache::Mhsa(c)) => l.backward(params, Some(c), g, grads),
            (AnyLayer::Conv(l), AnyCache::Conv(c)) => l.backward(params, Some(c), g, grads),
            (AnyLayer::Activation(l), AnyCache::Activation(c)) => {
                l.backward(params, Some(c), g, grads)
            }
            (AnyLayer::Dropout(l), AnyCache::Dropout(c)) => l.backward(params, Some(c), g, grads),
            (AnyLayer::Glu, AnyCache::Glu(c)) => Glu.backward(params, Some(c), g, grads),
            _ => Err(Error::MissingContext),
        }
    }

    fn macs_per_token(&self) -> usize {
        match self {
            AnyLayer::Linear(l) => Layer::<f32>::macs_per_token(l),
            AnyLayer::Mhsa(l) => Layer::<f32>::macs_per_token(l),
            AnyLayer::Conv(l) => Layer::<f32>::macs_per_token(l),
            _ => 0,
        }
    }
}
