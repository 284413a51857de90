use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Error, Result};
use crate::nn::layers::softmax_backward_row;
use crate::nn::{softmax_rows, Ctx, Gradients, ParamId, Params, Scalar, Tensor};

pub const DEFAULT_JITTER: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateId {
    /// Used for overlapped-speech minibatches.
    A,
    /// Used for non-overlapped minibatches and always at inference.
    B,
    Single,
}

impl GateId {
    pub fn suffix(self) -> &'static str {
        match self {
            GateId::A => "gate_a",
            GateId::B => "gate_b",
            GateId::Single => "gate",
        }
    }
}

/// Softmax router over `N` experts: `G(x) = softmax(x R)` with `R: [D, N]`.
#[derive(Clone, Debug)]
pub struct Gate {
    pub router: ParamId,
    pub dim: usize,
    pub n_experts: usize,
    pub jitter: f64,
    pub id: GateId,
}

/// Per-token top-1 routing plus the full probability matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision<T> {
    pub expert_index: Vec<usize>,
    pub gate_prob: Vec<T>,
    pub dropped: Vec<bool>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> RoutingDecision<T> {
    pub fn tokens(&self) -> usize {
        self.expert_index.len()
    }

    pub fn n_experts(&self) -> usize {
        self.probs.cols()
    }

    /// Tokens whose argmax is each expert, before capacity truncation.
    pub fn routed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_experts()];
        for &e in &self.expert_index {
            counts[e] += 1;
        }
        counts
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped.iter().filter(|&&d| d).count()
    }
}

#[derive(Clone, Debug)]
pub struct GateCache<T> {
    /// Router input after jitter.
    input: Tensor<T>,
    /// Multiplicative jitter `1 + u`, absent when no jitter was drawn.
    noise: Option<Tensor<T>>,
}

impl Gate {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        dim: usize,
        n_experts: usize,
        jitter: f64,
        id: GateId,
        rng: &mut R,
    ) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::InvalidArgument(
                "at least one expert required".into(),
            ));
        }
        if !(jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "jitter {jitter} must be >= 0"
            )));
        }
        let bound = (6.0 / (dim + n_experts) as f64).sqrt();
        let router = params.register(
            format!("{name}.router"),
            Tensor::uniform(&[dim, n_experts], bound, rng),
        )?;
        Ok(Self {
            router,
            dim,
            n_experts,
            jitter,
            id,
        })
    }

    pub fn numel(&self) -> usize {
        self.dim * self.n_experts
    }

    /// Routes every token to its most probable expert (lowest index on ties).
    /// In train mode the router input is scaled by `1 + u`,
    /// `u ~ U(-jitter, jitter)`.
    pub fn route<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(RoutingDecision<T>, Option<GateCache<T>>)> {
        if x.cols() != self.dim {
            return shape_err(format!(
                "gate expects {} features, got {}",
                self.dim,
                x.cols()
            ));
        }
        let (input, noise) = if ctx.is_train() && self.jitter > 0.0 {
            let dist = Uniform::new_inclusive(-self.jitter, self.jitter).expect("jitter bound");
            let rng = &mut ctx.rng;
            let noise = Tensor::from_fn(x.shape(), |_| T::of(1.0 + dist.sample(rng)));
            (x.zip_map(&noise, |a, b| a * b)?, Some(noise))
        } else {
            (x.clone(), None)
        };
        let probs = softmax_rows(&input.matmul(params.get(self.router))?);
        let mut expert_index = Vec::with_capacity(x.rows());
        let mut gate_prob = Vec::with_capacity(x.rows());
        for r in 0..probs.rows() {
            let (mut best, mut bp) = (0, T::neg_infinity());
            for (i, &p) in probs.row(r).iter().enumerate() {
                if p > bp {
                    best = i;
                    bp = p;
                }
            }
            expert_index.push(best);
            gate_prob.push(bp);
        }
        let decision = RoutingDecision {
            dropped: vec![false; expert_index.len()],
            expert_index,
            gate_prob,
            probs,
        };
        let cache = ctx.is_train().then_some(GateCache { input, noise });
        Ok((decision, cache))
    }

    /// Backpropagates a gradient on the probability matrix into the router and
    /// returns the gradient on the (un-jittered) gate input.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: GateCache<T>,
        probs: &Tensor<T>,
        dprobs: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let mut dlogits = Tensor::zeros(probs.shape());
        for r in 0..probs.rows() {
            softmax_backward_row(probs.row(r), dprobs.row(r), dlogits.row_mut(r));
        }
        crate::nn::gemm_into(
            T::one(),
            &cache.input,
            true,
            &dlogits,
            false,
            T::one(),
            grads.get_mut(self.router),
        );
        let dinput = dlogits.matmul_t(false, params.get(self.router), true)?;
        match cache.noise {
            Some(noise) => dinput.zip_map(&noise, |d, n| d * n),
            None => Ok(dinput),
        }
    }
}
