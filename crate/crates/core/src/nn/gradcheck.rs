//! Central finite-difference gradient checking at 64-bit precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Activation, Ctx, Layer};
use super::spec::LayerSpec;
use super::{Gradients, Params, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Per-layer relative error bound.
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// End-to-end model relative error bound.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.max_rel_error.is_finite()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients with central differences of `loss` for every
/// parameter element and, if given, every input element.
pub fn compare<F>(
    name: &str,
    tolerance: f64,
    params: &mut Params<f64>,
    input: &mut Tensor<f64>,
    analytic_params: &Gradients<f64>,
    analytic_input: Option<&Tensor<f64>>,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&Params<f64>, &Tensor<f64>) -> f64,
{
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = loss(params, input);
            params.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = loss(params, input);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic_params.get(id).data()[k], numeric));
            checked += 1;
        }
    }
    if let Some(dx) = analytic_input {
        for k in 0..input.len() {
            let orig = input.data()[k];
            input.data_mut()[k] = orig + FD_STEP;
            let up = loss(params, input);
            input.data_mut()[k] = orig - FD_STEP;
            let down = loss(params, input);
            input.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(dx.data()[k], numeric));
            checked += 1;
        }
    }
    GradCheckReport {
        name: name.to_owned(),
        max_rel_error: worst,
        checked,
        tolerance,
    }
}

/// Input width a spec expects.
fn input_width(spec: &LayerSpec) -> usize {
    match *spec {
        LayerSpec::Linear { in_dim, .. } => in_dim,
        LayerSpec::LayerNorm { dim } => dim,
        LayerSpec::MhsaRelPos { dim, .. } => dim,
        LayerSpec::DepthwiseConv { channels, .. } => channels,
        LayerSpec::Glu => 6,
        LayerSpec::Activation(_) | LayerSpec::Dropout { .. } => 5,
    }
}

/// Checks one layer under the loss `Σ y ⊙ r` with random `r`.
pub fn check_layer(spec: &LayerSpec, segments: &[usize], seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::<f64>::new();
    let layer = spec.build(&mut params, spec.kind(), &mut rng)?;
    for t in params.values_mut() {
        *t = Tensor::randn(t.shape(), 0.5, &mut rng);
    }
    let tokens: usize = segments.iter().sum();
    let mut x = Tensor::randn(&[tokens, input_width(spec)], 1.0, &mut rng);
    let fwd_seed = seed ^ 0x5eed;
    let mut ctx = Ctx::train(fwd_seed, segments.to_vec());
    let (y, cache) = layer.forward(&params, &x, &mut ctx)?;
    let r = Tensor::randn(y.shape(), 1.0, &mut rng);
    let mut grads = Gradients::zeros_like(&params);
    let dx = layer.backward(&params, cache, &r, &mut grads)?;

    let loss = |p: &Params<f64>, x: &Tensor<f64>| {
        let mut ctx = Ctx::train(fwd_seed, segments.to_vec());
        let (y, _) = layer.forward(p, x, &mut ctx).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    Ok(compare(
        spec.kind(),
        LAYER_TOLERANCE,
        &mut params,
        &mut x,
        &grads,
        Some(&dx),
        loss,
    ))
}

/// One spec per layer kind, each with the segment layout it is checked on.
pub fn layer_suite() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (
            LayerSpec::Linear {
                in_dim: 5,
                out_dim: 4,
                bias: true,
            },
            vec![3],
        ),
        (LayerSpec::LayerNorm { dim: 6 }, vec![4]),
        (
            LayerSpec::MhsaRelPos {
                dim: 8,
                heads: 2,
                max_rel: Some(2),
            },
            vec![5, 3],
        ),
        (
            LayerSpec::DepthwiseConv {
                channels: 4,
                kernel: 5,
            },
            vec![6, 2],
        ),
        (LayerSpec::Activation(Activation::Relu), vec![4]),
        (LayerSpec::Activation(Activation::Swish), vec![4]),
        (LayerSpec::Activation(Activation::Sigmoid), vec![4]),
        (LayerSpec::Activation(Activation::Softmax), vec![4]),
        (LayerSpec::Dropout { p: 0.3 }, vec![4]),
        (LayerSpec::Glu, vec![4]),
    ]
}

pub fn run_layer_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    layer_suite()
        .iter()
        .map(|(spec, segs)| check_layer(spec, segs, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn every_layer_kind_passes() {
        for r in run_layer_suite(11).unwrap() {
            assert!(r.passed(), "{} rel error {}", r.name, r.max_rel_error);
            assert!(r.checked > 0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_shapes_and_seeds(
            seed in any::<u64>(),
            seg_a in 1usize..6,
            seg_b in 1usize..4,
            width in 2usize..5,
            kind in 0usize..4,
        ) {
            let spec = match kind {
                0 => LayerSpec::Linear { in_dim: width, out_dim: width + 1, bias: true },
                1 => LayerSpec::LayerNorm { dim: width + 1 },
                2 => LayerSpec::MhsaRelPos { dim: 2 * width, heads: 2, max_rel: Some(width) },
                _ => LayerSpec::DepthwiseConv { channels: width, kernel: 3 },
            };
            let r = check_layer(&spec, &[seg_a, seg_b], seed).unwrap();
            prop_assert!(r.passed(), "{} rel error {}", r.name, r.max_rel_error);
        }
    }
}
