use rand::Rng;

use super::layers::{Ctx, Layer};
use super::{Gradients, ParamId, Params, Scalar, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Per-channel 1-D convolution along time with zero "same" padding.
/// Weight layout is `[kernel, channels]`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    x: Tensor<T>,
    segments: Vec<usize>,
}

impl DepthwiseConv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return invalid(format!("conv kernel must be odd, got {kernel}"));
        }
        let bound = (1.0 / kernel as f64).sqrt();
        Ok(Self {
            weight: params.register(
                format!("{name}.weight"),
                Tensor::uniform(&[kernel, channels], bound, rng),
            )?,
            bias: params.register(format!("{name}.bias"), Tensor::zeros(&[channels]))?,
            channels,
            kernel,
        })
    }

    /// Yields `(output_row, input_row, tap)` triples of one segment.
    fn taps(&self, len: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let half = self.kernel / 2;
        (0..len).flat_map(move |t| {
            (0..self.kernel).filter_map(move |k| {
                let src = t as isize + k as isize - half as isize;
                (src >= 0 && (src as usize) < len).then_some((t, src as usize, k))
            })
        })
    }
}

impl<T: Scalar> Layer<T> for DepthwiseConv1d {
    type Cache = ConvCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        ctx.check_tokens(x)?;
        if x.cols() != self.channels {
            return shape_err(format!(
                "conv expects {} channels, got {}",
                self.channels,
                x.cols()
            ));
        }
        let w = params.get(self.weight);
        let b = params.get(self.bias).data();
        let mut y = Tensor::zeros(x.shape());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        let mut r0 = 0;
        for &len in &ctx.segments {
            for (t, s, k) in self.taps(len) {
                let wk = w.row(k);
                let xs = x.row(r0 + s);
                for ((o, &wv), &xv) in y.row_mut(r0 + t).iter_mut().zip(wk).zip(xs) {
                    *o += wv * xv;
                }
            }
            r0 += len;
        }
        let cache = ctx.is_train().then(|| ConvCache {
            x: x.clone(),
            segments: ctx.segments.clone(),
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
        grad_out.same_shape(&c.x)?;
        {
            let gb = grads.get_mut(self.bias).data_mut();
            for (g, s) in gb.iter_mut().zip(grad_out.sum_rows()) {
                *g += s;
            }
        }
        let w = params.get(self.weight);
        let mut dx = Tensor::zeros(c.x.shape());
        let mut r0 = 0;
        for &len in &c.segments {
            for (t, s, k) in self.taps(len) {
                let dy = grad_out.row(r0 + t);
                {
                    let gw = grads.get_mut(self.weight).row_mut(k);
                    for ((g, &d), &xv) in gw.iter_mut().zip(dy).zip(c.x.row(r0 + s)) {
                        *g += d * xv;
                    }
                }
                for ((o, &d), &wv) in dx.row_mut(r0 + s).iter_mut().zip(dy).zip(w.row(k)) {
                    *o += d * wv;
                }
            }
            r0 += len;
        }
        Ok(dx)
    }

    fn macs_per_token(&self) -> usize {
        self.kernel * self.channels
    }
}
