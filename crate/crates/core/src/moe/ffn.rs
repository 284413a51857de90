use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::Layer;
use crate::nn::Linear;
use crate::nn::{Activation, Ctx, Dropout, Gradients, Params, Scalar, Tensor};

/// `linear(D→H) → ReLU → dropout → linear(H→D)`. The dense Conformer FFN is
/// the same module with zero dropout.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: Dropout,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    mask: Option<Option<Tensor<T>>>,
    hidden: Tensor<T>,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(params, &format!("{name}.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(params, &format!("{name}.fc2"), hidden, dim, true, rng)?,
            dropout: Dropout { p: dropout },
        })
    }

    /// Scalar parameter count.
    pub fn numel(&self) -> usize {
        let (d, h) = (self.fc1.in_dim, self.fc1.out_dim);
        d * h + h + h * d + d
    }

    pub fn macs_per_token(&self) -> usize {
        2 * self.fc1.in_dim * self.fc1.out_dim
    }
}

impl<T: Scalar> Layer<T> for FeedForward {
    type Cache = FeedForwardCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        let pre = self.fc1.apply(params, x)?;
        let act = Activation::Relu.apply(&pre);
        let (hidden, mask) = self.dropout.forward(params, &act, ctx)?;
        let y = self.fc2.apply(params, &hidden)?;
        let cache = ctx.is_train().then(|| FeedForwardCache {
            x: x.clone(),
            pre,
            mask,
            hidden,
        });
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
        let dh = self.fc2.backprop(params, &c.hidden, grad_out, grads)?;
        let dact = self.dropout.backward(params, c.mask, &dh, grads)?;
        let dpre = c
            .pre
            .zip_map(&dact, |p, d| if p > T::zero() { d } else { T::zero() })?;
        self.fc1.backprop(params, &c.x, &dpre, grads)
    }

    fn macs_per_token(&self) -> usize {
        FeedForward::macs_per_token(self)
    }
}
