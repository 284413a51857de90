use rand::Rng;

use super::ffn::{FeedForward, FeedForwardCache};
use super::gate::{Gate, GateCache, GateId, RoutingDecision};
use crate::class::OverlapClass;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::layers::Layer;
use crate::nn::{Ctx, Gradients, Params, Scalar, Tensor};

pub const DEFAULT_CAPACITY_FACTOR: f64 = 1.5;
pub const DEFAULT_EXPERT_DROPOUT: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Per-expert dispatch fractions `f` and mean router probabilities `P` for
/// one layer call.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadStats {
    pub f: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: f64,
    pub tokens: usize,
    pub dropped: usize,
}

impl LoadStats {
    pub fn n_experts(&self) -> usize {
        self.f.len()
    }

    pub fn from_decision<T: Scalar>(d: &RoutingDecision<T>, alpha: f64) -> Self {
        let n = d.tokens().max(1) as f64;
        let f = d.routed_counts().iter().map(|&c| c as f64 / n).collect();
        let p = d.probs.sum_rows().iter().map(|&s| s.as_f64() / n).collect();
        Self {
            f,
            p,
            alpha,
            tokens: d.tokens(),
            dropped: d.dropped_count(),
        }
    }

    /// Token-weighted mean of several layers' statistics.
    pub fn aggregate(stats: &[LoadStats]) -> Option<LoadStats> {
        let first = stats.first()?;
        let total: usize = stats.iter().map(|s| s.tokens).sum();
        let w = |s: &LoadStats| s.tokens as f64 / total.max(1) as f64;
        let n = first.n_experts();
        let mut f = vec![0.0; n];
        let mut p = vec![0.0; n];
        for s in stats {
            for i in 0..n {
                f[i] += w(s) * s.f[i];
                p[i] += w(s) * s.p[i];
            }
        }
        Some(LoadStats {
            f,
            p,
            alpha: first.alpha,
            tokens: total,
            dropped: stats.iter().map(|s| s.dropped).sum(),
        })
    }
}

/// Load-balancing penalty `α · N · Σ f_i P_i`.
pub fn aux_loss(stats: &LoadStats) -> f64 {
    let n = stats.n_experts() as f64;
    stats.alpha
        * n
        * stats
            .f
            .iter()
            .zip(&stats.p)
            .map(|(f, p)| f * p)
            .sum::<f64>()
}

/// Per-expert token budget `⌈cf · tokens / N⌉`.
pub fn expert_capacity(capacity_factor: f64, tokens: usize, n_experts: usize) -> Result<usize> {
    if !(capacity_factor > 0.0) {
        return invalid(format!("capacity factor {capacity_factor} must be > 0"));
    }
    Ok((capacity_factor * tokens as f64 / n_experts as f64).ceil() as usize)
}

#[derive(Clone, Debug)]
pub struct ExpertBank {
    pub experts: Vec<FeedForward>,
    pub dim: usize,
    pub hidden: usize,
}

struct ExpertSlot<T> {
    tokens: Vec<usize>,
    output: Tensor<T>,
    cache: Option<FeedForwardCache<T>>,
}

pub struct DispatchCache<T> {
    slots: Vec<ExpertSlot<T>>,
    gate_prob: Vec<T>,
    tokens: usize,
}

impl ExpertBank {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        n_experts: usize,
        dim: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_experts == 0 {
            return invalid("at least one expert required");
        }
        let experts = (0..n_experts)
            .map(|e| {
                FeedForward::new(
                    params,
                    &format!("{name}.experts.{e}"),
                    dim,
                    hidden,
                    dropout,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            experts,
            dim,
            hidden,
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    /// Applies capacity limits in token order, then runs each expert on its
    /// kept tokens. Output rows are `gate_prob · E(x)` for kept tokens and
    /// zero for dropped ones; `decision.dropped` is updated in place.
    pub fn dispatch<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        decision: &mut RoutingDecision<T>,
        capacity_factor: f64,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<DispatchCache<T>>)> {
        if x.cols() != self.dim || x.rows() != decision.tokens() {
            return shape_err(format!(
                "moe input {:?} vs {} routed tokens of width {}",
                x.shape(),
                decision.tokens(),
                self.dim
            ));
        }
        if decision.n_experts() != self.len() {
            return shape_err("routing decision expert count differs from bank");
        }
        let cap = expert_capacity(capacity_factor, x.rows(), self.len())?;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.len()];
        for (t, &e) in decision.expert_index.iter().enumerate() {
            if groups[e].len() < cap {
                groups[e].push(t);
                decision.dropped[t] = false;
            } else {
                decision.dropped[t] = true;
            }
        }
        let mut y = Tensor::zeros(x.shape());
        let mut slots = Vec::with_capacity(self.len());
        for (expert, tokens) in self.experts.iter().zip(groups) {
            if tokens.is_empty() {
                slots.push(ExpertSlot {
                    tokens,
                    output: Tensor::zeros(&[0, self.dim]),
                    cache: None,
                });
                continue;
            }
            let rows: Vec<Tensor<T>> = tokens.iter().map(|&t| x.slice_rows(t, 1)).collect();
            let xe = Tensor::vstack(&rows)?;
            let (ye, cache) = expert.forward(params, &xe, ctx)?;
            for (r, &t) in tokens.iter().enumerate() {
                let p = decision.gate_prob[t];
                for (o, &v) in y.row_mut(t).iter_mut().zip(ye.row(r)) {
                    *o = p * v;
                }
            }
            slots.push(ExpertSlot {
                tokens,
                output: ye,
                cache,
            });
        }
        let cache = ctx.is_train().then(|| DispatchCache {
            slots,
            gate_prob: decision.gate_prob.clone(),
            tokens: x.rows(),
        });
        Ok((y, cache))
    }

    /// Returns `(dx, d gate_prob)`.
    pub fn dispatch_backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: DispatchCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<(Tensor<T>, Vec<T>)> {
        let mut dx = Tensor::zeros(&[cache.tokens, self.dim]);
        let mut dprob = vec![T::zero(); cache.tokens];
        for (expert, slot) in self.experts.iter().zip(cache.slots) {
            if slot.tokens.is_empty() {
                continue;
            }
            let mut dye = Tensor::zeros(slot.output.shape());
            for (r, &t) in slot.tokens.iter().enumerate() {
                let g = grad_out.row(t);
                dprob[t] = g.iter().zip(slot.output.row(r)).map(|(&a, &b)| a * b).sum();
                let p = cache.gate_prob[t];
                for (d, &gv) in dye.row_mut(r).iter_mut().zip(g) {
                    *d = p * gv;
                }
            }
            let dxe = expert.backward(params, slot.cache, &dye, grads)?;
            for (r, &t) in slot.tokens.iter().enumerate() {
                dx.row_mut(t).copy_from_slice(dxe.row(r));
            }
        }
        Ok((dx, dprob))
    }
}

/// One shared gate, or the two-gate (overlap / non-overlap) variant.
#[derive(Clone, Debug)]
pub enum Gating {
    Single(Gate),
    Multi { a: Gate, b: Gate },
}

/// Sparsely-gated top-1 expert layer.
#[derive(Clone, Debug)]
pub struct MoeLayer {
    pub bank: ExpertBank,
    pub gating: Gating,
    pub capacity_factor: f64,
    pub alpha: f64,
}

pub struct MoeCache<T> {
    gate: GateId,
    gate_cache: GateCache<T>,
    dispatch: DispatchCache<T>,
    decision: RoutingDecision<T>,
    f: Vec<f64>,
}

/// Result of a MoE layer call.
pub struct MoeOutput<T> {
    pub y: Tensor<T>,
    pub stats: LoadStats,
    pub decision: RoutingDecision<T>,
    pub cache: Option<MoeCache<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct MoeShape {
    pub dim: usize,
    pub hidden: usize,
    pub n_experts: usize,
    pub capacity_factor: f64,
    pub jitter: f64,
    pub expert_dropout: f64,
    pub alpha: f64,
    pub multi_gate: bool,
}

impl MoeLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        shape: MoeShape,
        rng: &mut R,
    ) -> Result<Self> {
        expert_capacity(shape.capacity_factor, 1, 1)?;
        let bank = ExpertBank::new(
            params,
            name,
            shape.n_experts,
            shape.dim,
            shape.hidden,
            shape.expert_dropout,
            rng,
        )?;
        let mut gate = |id: GateId, rng: &mut R| {
            Gate::new(
                params,
                &format!("{name}.{}", id.suffix()),
                shape.dim,
                shape.n_experts,
                shape.jitter,
                id,
                rng,
            )
        };
        let gating = if shape.multi_gate {
            let a = gate(GateId::A, rng)?;
            let b = gate(GateId::B, rng)?;
            Gating::Multi { a, b }
        } else {
            Gating::Single(gate(GateId::Single, rng)?)
        };
        Ok(Self {
            bank,
            gating,
            capacity_factor: shape.capacity_factor,
            alpha: shape.alpha,
        })
    }

    /// Gate for this call: the single gate, or for the two-gate variant gate
    /// A/B by minibatch class during training and always gate B at inference.
    pub fn select_gate(&self, train: bool, class: Option<OverlapClass>) -> Result<&Gate> {
        match &self.gating {
            Gating::Single(g) => Ok(g),
            Gating::Multi { b, .. } if !train => Ok(b),
            Gating::Multi { a, b } => match class {
                Some(OverlapClass::Overlap) => Ok(a),
                Some(OverlapClass::NonOverlap) => Ok(b),
                None => invalid("multi-gate training needs a class-pure minibatch"),
            },
        }
    }

    fn gate_by_id(&self, id: GateId) -> &Gate {
        match (&self.gating, id) {
            (Gating::Single(g), _) => g,
            (Gating::Multi { a, .. }, GateId::A) => a,
            (Gating::Multi { b, .. }, _) => b,
        }
    }

    pub fn gates(&self) -> Vec<&Gate> {
        match &self.gating {
            Gating::Single(g) => vec![g],
            Gating::Multi { a, b } => vec![a, b],
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
        class: Option<OverlapClass>,
    ) -> Result<MoeOutput<T>> {
        let gate = self.select_gate(ctx.is_train(), class)?;
        let (mut decision, gate_cache) = gate.route(params, x, ctx)?;
        let (y, dispatch) =
            self.bank
                .dispatch(params, x, &mut decision, self.capacity_factor, ctx)?;
        let stats = LoadStats::from_decision(&decision, self.alpha);
        let cache = match (gate_cache, dispatch) {
            (Some(gate_cache), Some(dispatch)) => Some(MoeCache {
                gate: gate.id,
                gate_cache,
                dispatch,
                decision: decision.clone(),
                f: stats.f.clone(),
            }),
            _ => None,
        };
        Ok(MoeOutput {
            y,
            stats,
            decision,
            cache,
        })
    }

    /// `aux_coef` is `∂loss/∂L_MoE` for this layer (zero to skip the penalty).
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: Option<MoeCache<T>>,
        grad_out: &Tensor<T>,
        aux_coef: T,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let c = cache.ok_or(Error::MissingContext)?;
        let (mut dx, dprob) = self
            .bank
            .dispatch_backward(params, c.dispatch, grad_out, grads)?;
        let probs = &c.decision.probs;
        let n_tok = probs.rows();
        let n = self.bank.len();
        let mut dprobs = Tensor::zeros(probs.shape());
        let aux_scale = aux_coef * T::of(self.alpha * n as f64 / n_tok.max(1) as f64);
        for t in 0..n_tok {
            let row = dprobs.row_mut(t);
            for (i, d) in row.iter_mut().enumerate() {
                *d = aux_scale * T::of(c.f[i]);
            }
            row[c.decision.expert_index[t]] += dprob[t];
        }
        let gate = self.gate_by_id(c.gate);
        let dgate = gate.backward(params, c.gate_cache, probs, &dprobs, grads)?;
        dx.add_assign(&dgate)?;
        Ok(dx)
    }

    /// Expert FFN plus router multiply-accumulates per token.
    pub fn macs_per_token(&self) -> usize {
        self.bank.experts[0].macs_per_token() + self.bank.dim * self.bank.len()
    }
}
