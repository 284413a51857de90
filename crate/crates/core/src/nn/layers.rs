use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::gemm_into;
use super::{Gradients, ParamId, Params, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward state: mode, the RNG driving dropout and jitter, and the
/// lengths of the independent sequences stacked along the token axis.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    pub segments: Vec<usize>,
}

impl Ctx {
    pub fn eval(segments: Vec<usize>) -> Self {
        Self {
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
            segments,
        }
    }

    pub fn train(seed: u64, segments: Vec<usize>) -> Self {
        Self {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            segments,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn tokens(&self) -> usize {
        self.segments.iter().sum()
    }

    pub(crate) fn check_tokens<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        if x.rows() != self.tokens() {
            return shape_err(format!(
                "{} rows but segments cover {}",
                x.rows(),
                self.tokens()
            ));
        }
        Ok(())
    }
}

/// A differentiable layer with an explicit saved context.
///
/// `forward` returns a cache only in train mode; `backward` accumulates
/// parameter gradients into `grads` and returns the input gradient.
pub trait Layer<T: Scalar> {
    type Cache;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)>;

    fn backward(
        &self,
        params: &Params<T>,
        cache: Option<Self::Cache>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>>;

    /// Multiply-accumulates per token.
    fn macs_per_token(&self) -> usize {
        0
    }
}

fn keep<C>(ctx: &Ctx, c: impl FnOnce() -> C) -> Option<C> {
    ctx.is_train().then(c)
}

fn expect_width<T: Scalar>(x: &Tensor<T>, width: usize, what: &str) -> Result<()> {
    if x.cols() != width {
        return shape_err(format!(
            "{what}: expected {width} features, got {}",
            x.cols()
        ));
    }
    Ok(())
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = params.register(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng),
        )?;
        let bias = if bias {
            Some(params.register(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn apply<T: Scalar>(&self, params: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_width(x, self.in_dim, "linear")?;
        let mut y = x.matmul(params.get(self.weight))?;
        if let Some(b) = self.bias {
            y.add_row(params.get(b).data());
        }
        Ok(y)
    }

    /// Gradient pass given the layer input explicitly.
    pub fn backprop<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        expect_width(grad_out, self.out_dim, "linear grad")?;
        gemm_into(
            T::one(),
            x,
            true,
            grad_out,
            false,
            T::one(),
            grads.get_mut(self.weight),
        );
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for (g, s) in gb.data_mut().iter_mut().zip(grad_out.sum_rows()) {
                *g += s;
            }
        }
        grad_out.matmul_t(false, params.get(self.weight), true)
    }
}

impl<T: Scalar> Layer<T> for Linear {
    type Cache = Tensor<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        Ok((self.apply(params, x)?, keep(ctx, || x.clone())))
    }

    fn backward(
        &self,
        params: &Params<T>,
        cache: Option<Tensor<T>>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let x = cache.ok_or(Error::MissingContext)?;
        self.backprop(params, &x, grad_out, grads)
    }

    fn macs_per_token(&self) -> usize {
        self.in_dim * self.out_dim
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalisation over the feature axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl LayerNorm {
    pub fn new<T: Scalar>(params: &mut Params<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.register(format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: params.register(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
            dim,
            eps: LAYER_NORM_EPS,
        })
    }

    /// Normalised input before the affine transform.
    pub fn normalize<T: Scalar>(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let n = T::of(self.dim as f64);
        let eps = T::of(self.eps);
        let mut xhat = x.clone();
        let mut inv = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv.push(is);
        }
        (xhat, inv)
    }
}

impl<T: Scalar> Layer<T> for LayerNorm {
    type Cache = LayerNormCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        expect_width(x, self.dim, "layernorm")?;
        let (xhat, inv_std) = self.normalize(x);
        let g = params.get(self.gamma).data();
        let b = params.get(self.beta).data();
        let mut y = xhat.clone();
        for r in 0..y.rows() {
            for ((v, &gi), &bi) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        Ok((y, keep(ctx, || LayerNormCache { xhat, inv_std })))
    }

    fn backward(
        &self,
        params: &Params<T>,
        cache: Option<Self::Cache>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let LayerNormCache { xhat, inv_std } = cache.ok_or(Error::MissingContext)?;
        grad_out.same_shape(&xhat)?;
        let g = params.get(self.gamma).data();
        let n = T::of(self.dim as f64);
        {
            let gg = grads.get_mut(self.gamma).data_mut();
            for r in 0..xhat.rows() {
                for ((acc, &dy), &xh) in gg.iter_mut().zip(grad_out.row(r)).zip(xhat.row(r)) {
                    *acc += dy * xh;
                }
            }
        }
        {
            let gb = grads.get_mut(self.beta).data_mut();
            for (acc, s) in gb.iter_mut().zip(grad_out.sum_rows()) {
                *acc += s;
            }
        }
        let mut dx = Tensor::zeros(xhat.shape());
        let mut dxhat = vec![T::zero(); self.dim];
        for r in 0..xhat.rows() {
            for ((d, &dy), &gi) in dxhat.iter_mut().zip(grad_out.row(r)).zip(g) {
                *d = dy * gi;
            }
            let xh = xhat.row(r);
            let mean_d = dxhat.iter().copied().sum::<T>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
            for ((o, &d), &x) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                *o = inv_std[r] * (d - mean_d - x * mean_dx);
            }
        }
        Ok(dx)
    }

    fn macs_per_token(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
    Sigmoid,
    /// Row-wise softmax over the feature axis.
    Softmax,
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_in_place(y.row_mut(r));
    }
    y
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Gradient of a row-wise softmax: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward_rows<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(y.shape());
    for r in 0..y.rows() {
        softmax_backward_row(y.row(r), dy.row(r), dx.row_mut(r));
    }
    dx
}

pub fn softmax_backward_row<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((o, &yi), &di) in dx.iter_mut().zip(y).zip(dy) {
        *o = yi * (di - dot);
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Swish => x.map(|v| v * sigmoid(v)),
            Activation::Sigmoid => x.map(sigmoid),
            Activation::Softmax => softmax_rows(x),
        }
    }

    /// Input gradient given the forward input and output.
    pub fn grad<T: Scalar>(
        self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Activation::Relu => x.zip_map(dy, |v, d| if v > T::zero() { d } else { T::zero() }),
            Activation::Swish => x.zip_map(dy, |v, d| {
                let s = sigmoid(v);
                d * (s + v * s * (T::one() - s))
            }),
            Activation::Sigmoid => y.zip_map(dy, |s, d| d * s * (T::one() - s)),
            Activation::Softmax => {
                y.same_shape(dy)?;
                Ok(softmax_backward_rows(y, dy))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActivationCache<T> {
    x: Tensor<T>,
    y: Tensor<T>,
}

impl<T: Scalar> Layer<T> for Activation {
    type Cache = ActivationCache<T>;

    fn forward(
        &self,
        _params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        let y = self.apply(x);
        let cache = keep(ctx, || ActivationCache {
            x: x.clone(),
            y: y.clone(),
        });
        Ok((y, cache))
    }

    fn backward(
        &self,
        _params: &Params<T>,
        cache: Option<Self::Cache>,
        grad_out: &Tensor<T>,
        _grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let c = cache.ok_or(Error::MissingContext)?;
        self.grad(&c.x, &c.y, grad_out)
    }
}

/// Gated linear unit over the feature axis: `[a | b] -> a ⊙ σ(b)`.
#[derive(Clone, Copy, Debug)]
pub struct Glu;

impl<T: Scalar> Layer<T> for Glu {
    type Cache = Tensor<T>;

    fn forward(
        &self,
        _params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let c2 = x.cols();
        if c2 % 2 != 0 {
            return shape_err(format!("glu needs an even width, got {c2}"));
        }
        let c = c2 / 2;
        let mut y = Tensor::zeros(&[x.rows(), c]);
        for r in 0..x.rows() {
            let row = x.row(r);
            for (j, o) in y.row_mut(r).iter_mut().enumerate() {
                *o = row[j] * sigmoid(row[c + j]);
            }
        }
        Ok((y, keep(ctx, || x.clone())))
    }

    fn backward(
        &self,
        _params: &Params<T>,
        cache: Option<Tensor<T>>,
        grad_out: &Tensor<T>,
        _grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let x = cache.ok_or(Error::MissingContext)?;
        let c = x.cols() / 2;
        expect_width(grad_out, c, "glu grad")?;
        let mut dx = Tensor::zeros(x.shape());
        for r in 0..x.rows() {
            let row = x.row(r);
            let dy = grad_out.row(r);
            let out = dx.row_mut(r);
            for j in 0..c {
                let s = sigmoid(row[c + j]);
                out[j] = dy[j] * s;
                out[c + j] = dy[j] * row[j] * s * (T::one() - s);
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: scales kept activations by `1/(1-p)` in train mode,
/// exact identity in eval mode.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
}

impl<T: Scalar> Layer<T> for Dropout {
    /// Per-element multiplier, absent when nothing was dropped.
    type Cache = Option<Tensor<T>>;

    fn forward(
        &self,
        _params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        if !ctx.is_train() {
            return Ok((x.clone(), None));
        }
        if self.p <= 0.0 {
            return Ok((x.clone(), Some(None)));
        }
        let scale = T::of(1.0 / (1.0 - self.p));
        let p = self.p;
        let rng = &mut ctx.rng;
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                scale
            }
        });
        let y = x.zip_map(&mask, |a, m| a * m)?;
        Ok((y, Some(Some(mask))))
    }

    fn backward(
        &self,
        _params: &Params<T>,
        cache: Option<Self::Cache>,
        grad_out: &Tensor<T>,
        _grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        match cache.ok_or(Error::MissingContext)? {
            None => Ok(grad_out.clone()),
            Some(mask) => grad_out.zip_map(&mask, |a, m| a * m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_passes_input_through() {
        let mut p = Params::<f64>::new();
        let mut rng = rand::rng();
        let lin = Linear::new(&mut p, "l", 3, 3, true, &mut rng).unwrap();
        p.assign("l.weight", Tensor::identity(3)).unwrap();
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let mut ctx = Ctx::train(0, vec![4]);
        let (y, cache) = lin.forward(&p, &x, &mut ctx).unwrap();
        assert_eq!(y, x);
        // d(sum y)/dx = 1
        let mut g = Gradients::zeros_like(&p);
        let dx = lin
            .backward(&p, cache, &Tensor::full(&[4, 3], 1.0), &mut g)
            .unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn layernorm_of_constant_row_is_zero() {
        let mut p = Params::<f64>::new();
        let ln = LayerNorm::new(&mut p, "ln", 5).unwrap();
        let x = Tensor::full(&[2, 5], 3.25);
        let (y, _) = ln.forward(&p, &x, &mut Ctx::eval(vec![2])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax_rows(&Tensor::<f64>::zeros(&[1, 4]));
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn backward_without_context_errors() {
        let mut p = Params::<f32>::new();
        let mut rng = rand::rng();
        let lin = Linear::new(&mut p, "l", 2, 2, false, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 2]);
        let (_, cache) = lin.forward(&p, &x, &mut Ctx::eval(vec![1])).unwrap();
        assert!(cache.is_none());
        let mut g = Gradients::zeros_like(&p);
        let err = lin.backward(&p, cache, &Tensor::zeros(&[1, 2]), &mut g);
        assert!(matches!(err, Err(Error::MissingContext)));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let x = Tensor::<f64>::full(&[50, 20], 1.0);
        let d = Dropout { p: 0.5 };
        let p = Params::new();
        let (y, _) = d.forward(&p, &x, &mut Ctx::eval(vec![50])).unwrap();
        assert_eq!(y, x);
        let (y, _) = d.forward(&p, &x, &mut Ctx::train(3, vec![50])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v == 2.0).count();
        assert!((300..700).contains(&kept));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut p = Params::<f64>::new();
        let mut rng = rand::rng();
        let ln = LayerNorm::new(&mut p, "ln", 4).unwrap();
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let (_, c) = ln.forward(&p, &x, &mut Ctx::train(0, vec![3])).unwrap();
        let mut g = Gradients::zeros_like(&p);
        let dx = ln.backward(&p, c, &Tensor::zeros(&[3, 4]), &mut g).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert_eq!(g.global_norm(), 0.0);
    }
}
