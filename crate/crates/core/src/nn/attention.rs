//! Multi-head self-attention with a learned relative-position bias.
//!
//! Each head adds `bias[h, clip(j - i)]` to its attention logits, where the
//! offset is clipped to `±max_rel`. Attention is full (non-causal) within each
//! segment and never crosses segment boundaries.

use rand::Rng;

use super::layers::{softmax_backward_row, softmax_in_place, Ctx, Layer, Linear};
use super::{Gradients, ParamId, Params, Scalar, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

pub const DEFAULT_MAX_REL: usize = 64;

#[derive(Clone, Debug)]
pub struct RelPosMhsa {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    /// `[heads, 2 * max_rel + 1]`; `None` disables the position bias.
    pub rel_bias: Option<ParamId>,
    pub dim: usize,
    pub heads: usize,
    pub max_rel: usize,
}

#[derive(Clone, Debug)]
pub struct MhsaCache<T> {
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    concat: Tensor<T>,
    attn: Vec<Tensor<T>>,
    segments: Vec<usize>,
}

fn block<T: Scalar>(t: &Tensor<T>, r0: usize, nr: usize, c0: usize, nc: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[nr, nc]);
    for i in 0..nr {
        out.row_mut(i).copy_from_slice(&t.row(r0 + i)[c0..c0 + nc]);
    }
    out
}

fn add_block<T: Scalar>(t: &mut Tensor<T>, r0: usize, c0: usize, src: &Tensor<T>) {
    let nc = src.cols();
    for i in 0..src.rows() {
        for (d, &s) in t.row_mut(r0 + i)[c0..c0 + nc].iter_mut().zip(src.row(i)) {
            *d += s;
        }
    }
}

impl RelPosMhsa {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        dim: usize,
        heads: usize,
        max_rel: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return invalid(format!("model dim {dim} not divisible by {heads} heads"));
        }
        let query = Linear::new(params, &format!("{name}.query"), dim, dim, true, rng)?;
        let key = Linear::new(params, &format!("{name}.key"), dim, dim, true, rng)?;
        let value = Linear::new(params, &format!("{name}.value"), dim, dim, true, rng)?;
        let out = Linear::new(params, &format!("{name}.out"), dim, dim, true, rng)?;
        let (rel_bias, max_rel) = match max_rel {
            Some(r) => (
                Some(params.register(
                    format!("{name}.rel_bias"),
                    Tensor::zeros(&[heads, 2 * r + 1]),
                )?),
                r,
            ),
            None => (None, 0),
        };
        Ok(Self {
            query,
            key,
            value,
            out,
            rel_bias,
            dim,
            heads,
            max_rel,
        })
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn rel_index(&self, i: usize, j: usize) -> usize {
        let r = self.max_rel as isize;
        let off = (j as isize - i as isize).clamp(-r, r);
        (off + r) as usize
    }

    /// Per-token multiply-accumulates for a sequence of `seq_len` frames.
    pub fn macs_per_token_at(&self, seq_len: usize) -> usize {
        4 * self.dim * self.dim + 2 * seq_len * self.dim
    }
}

impl<T: Scalar> Layer<T> for RelPosMhsa {
    type Cache = MhsaCache<T>;

    fn forward(
        &self,
        params: &Params<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, Option<Self::Cache>)> {
        ctx.check_tokens(x)?;
        if x.cols() != self.dim {
            return shape_err(format!(
                "mhsa expects {} features, got {}",
                self.dim,
                x.cols()
            ));
        }
        let q = self.query.apply(params, x)?;
        let k = self.key.apply(params, x)?;
        let v = self.value.apply(params, x)?;
        let dk = self.head_dim();
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let bias = self.rel_bias.map(|b| params.get(b));
        let train = ctx.is_train();

        let mut concat = Tensor::zeros(&[x.rows(), self.dim]);
        let mut attn = Vec::new();
        let mut r0 = 0;
        for &len in &ctx.segments {
            for h in 0..self.heads {
                let c0 = h * dk;
                let qh = block(&q, r0, len, c0, dk);
                let kh = block(&k, r0, len, c0, dk);
                let vh = block(&v, r0, len, c0, dk);
                let mut logits = qh.matmul_t(false, &kh, true)?;
                logits.scale(scale);
                for i in 0..len {
                    let row = logits.row_mut(i);
                    if let Some(b) = bias {
                        let brow = b.row(h);
                        for (j, l) in row.iter_mut().enumerate() {
                            *l += brow[self.rel_index(i, j)];
                        }
                    }
                    softmax_in_place(row);
                }
                let ch = logits.matmul(&vh)?;
                add_block(&mut concat, r0, c0, &ch);
                if train {
                    attn.push(logits);
                }
            }
            r0 += len;
        }
        let y = self.out.apply(params, &concat)?;
        let cache = train.then(|| MhsaCache {
            x: x.clone(),
            q,
            k,
            v,
            concat,
            attn,
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
        let d_concat = self.out.backprop(params, &c.concat, grad_out, grads)?;
        let dk = self.head_dim();
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let n = c.x.rows();
        let mut dq = Tensor::zeros(&[n, self.dim]);
        let mut dkey = Tensor::zeros(&[n, self.dim]);
        let mut dv = Tensor::zeros(&[n, self.dim]);
        let mut attn = c.attn.iter();
        let mut r0 = 0;
        for &len in &c.segments {
            for h in 0..self.heads {
                let c0 = h * dk;
                let a = attn.next().ok_or(Error::MissingContext)?;
                let dch = block(&d_concat, r0, len, c0, dk);
                let qh = block(&c.q, r0, len, c0, dk);
                let kh = block(&c.k, r0, len, c0, dk);
                let vh = block(&c.v, r0, len, c0, dk);
                let da = dch.matmul_t(false, &vh, true)?;
                let dvh = a.matmul_t(true, &dch, false)?;
                let mut dl = Tensor::zeros(&[len, len]);
                for i in 0..len {
                    softmax_backward_row(a.row(i), da.row(i), dl.row_mut(i));
                }
                if let Some(b) = self.rel_bias {
                    let width = 2 * self.max_rel + 1;
                    let gb = grads.get_mut(b).data_mut();
                    for i in 0..len {
                        for (j, &g) in dl.row(i).iter().enumerate() {
                            gb[h * width + self.rel_index(i, j)] += g;
                        }
                    }
                }
                dl.scale(scale);
                let dqh = dl.matmul(&kh)?;
                let dkh = dl.matmul_t(true, &qh, false)?;
                add_block(&mut dq, r0, c0, &dqh);
                add_block(&mut dkey, r0, c0, &dkh);
                add_block(&mut dv, r0, c0, &dvh);
            }
            r0 += len;
        }
        let mut dx = self.query.backprop(params, &c.x, &dq, grads)?;
        dx.add_assign(&self.key.backprop(params, &c.x, &dkey, grads)?)?;
        dx.add_assign(&self.value.backprop(params, &c.x, &dv, grads)?)?;
        Ok(dx)
    }

    fn macs_per_token(&self) -> usize {
        4 * self.dim * self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(relpos: bool) -> (Params<f64>, RelPosMhsa) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Params::new();
        let m = RelPosMhsa::new(&mut p, "att", 8, 2, relpos.then_some(4), &mut rng).unwrap();
        (p, m)
    }

    #[test]
    fn single_frame_is_value_then_output_projection() {
        let (p, m) = layer(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let (y, _) = m.forward(&p, &x, &mut Ctx::eval(vec![1])).unwrap();
        let want = m.out.apply(&p, &m.value.apply(&p, &x).unwrap()).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_query_key_average_the_values() {
        let (mut p, m) = layer(true);
        for name in [
            "att.query.weight",
            "att.query.bias",
            "att.key.weight",
            "att.key.bias",
        ] {
            let shape = p.by_name(name).unwrap().shape().to_vec();
            p.assign(name, Tensor::zeros(&shape)).unwrap();
        }
        p.assign("att.out.weight", Tensor::identity(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let (y, _) = m.forward(&p, &x, &mut Ctx::eval(vec![5])).unwrap();
        // hand computation: every row is the column mean of V
        let v = m.value.apply(&p, &x).unwrap();
        let mean: Vec<f64> = v.sum_rows().iter().map(|s| s / 5.0).collect();
        for r in 0..5 {
            for (a, b) in y.row(r).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_frames_permutes_output_without_relpos() {
        let (p, m) = layer(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let xp = Tensor::vstack(&perm.map(|i| x.slice_rows(i, 1))).unwrap();
        let (y, _) = m.forward(&p, &x, &mut Ctx::eval(vec![4])).unwrap();
        let (yp, _) = m.forward(&p, &xp, &mut Ctx::eval(vec![4])).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in yp.row(k).iter().zip(y.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segments_do_not_attend_across_boundaries() {
        let (p, m) = layer(true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::randn(&[3, 8], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 8], 1.0, &mut rng);
        let both = Tensor::vstack(&[a.clone(), b]).unwrap();
        let (y, _) = m.forward(&p, &both, &mut Ctx::eval(vec![3, 2])).unwrap();
        let (ya, _) = m.forward(&p, &a, &mut Ctx::eval(vec![3])).unwrap();
        for (x, w) in y.slice_rows(0, 3).data().iter().zip(ya.data()) {
            assert!((x - w).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut p = Params::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(RelPosMhsa::new(&mut p, "a", 10, 3, None, &mut rng).is_err());
    }
}
