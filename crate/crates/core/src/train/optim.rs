use crate::error::{invalid, Result};
use crate::nn::{Gradients, Params, Scalar, Tensor};

pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>, weight_decay: f64) -> Self {
        let zeros: Vec<_> = params
            .iter()
            .map(|(_, _, p)| Tensor::zeros(p.shape()))
            .collect();
        Self {
            beta1: DEFAULT_BETAS.0,
            beta2: DEFAULT_BETAS.1,
            eps: DEFAULT_EPS,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return invalid("optimizer state does not match the parameter set");
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = T::of(1.0 - lr * self.weight_decay);
        let (b1t, b2t, eps) = (T::of(b1), T::of(b2), T::of(self.eps));
        let step = T::of(lr / c1);
        let c2s = T::of(c2.sqrt());
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, &g), m), v) in params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m)
                .zip(v)
            {
                *m = b1t * *m + (T::one() - b1t) * g;
                *v = b2t * *v + (T::one() - b2t) * g * g;
                *p = *p * decay - step * *m / (v.sqrt() / c2s + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = Params::<f64>::new();
        let id = p
            .register("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let mut g = Gradients::zeros_like(&p);
        *g.get_mut(id) = Tensor::from_vec(&[3], vec![0.3, -5.0, 0.0]).unwrap();
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &g, 0.1).unwrap();
        let w = p.get(id).data();
        // bias-corrected first step is lr · g/|g|
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = Params::<f64>::new();
        let id = p.register("w", Tensor::full(&[2], 4.0)).unwrap();
        let g = Gradients::zeros_like(&p);
        let mut opt = AdamW::new(&p, 0.5);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!(p
            .get(id)
            .data()
            .iter()
            .all(|&w| (w - 4.0 * 0.95).abs() < 1e-12));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut p = Params::<f64>::new();
        let a = p.register("a", Tensor::zeros(&[2])).unwrap();
        let b = p.register("b", Tensor::zeros(&[1])).unwrap();
        let mut g = Gradients::zeros_like(&p);
        *g.get_mut(a) = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        *g.get_mut(b) = Tensor::from_vec(&[1], vec![12.0]).unwrap();
        assert_eq!(clip_global_norm(&mut g, 5.0), 13.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
        assert_eq!(clip_global_norm(&mut g, 10.0), g.global_norm());
    }
}
