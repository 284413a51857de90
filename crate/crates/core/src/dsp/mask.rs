use super::Spectrogram;
use crate::error::{invalid, shape_err, Result};
use crate::nn::{Scalar, Tensor};

/// `S` real-valued masks, each `T x F`, every element in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet<T = f64> {
    masks: Vec<Tensor<T>>,
}

impl<T: Scalar> MaskSet<T> {
    pub fn new(masks: Vec<Tensor<T>>) -> Result<Self> {
        let Some(first) = masks.first() else {
            return invalid("mask set needs at least one channel");
        };
        let shape = first.shape().to_vec();
        if shape.len() != 2 {
            return shape_err("masks must be T x F matrices");
        }
        for m in &masks {
            if m.shape() != shape.as_slice() {
                return shape_err(format!("mask shapes {:?} vs {shape:?}", m.shape()));
            }
            if m.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                return invalid("mask values must lie in [0, 1]");
            }
        }
        Ok(Self { masks })
    }

    pub fn channels(&self) -> usize {
        self.masks.len()
    }

    pub fn frames(&self) -> usize {
        self.masks[0].rows()
    }

    pub fn bins(&self) -> usize {
        self.masks[0].cols()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.masks[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.masks.iter()
    }

    pub fn into_inner(self) -> Vec<Tensor<T>> {
        self.masks
    }
}

/// Scales the complex mixture by each real mask, preserving phase.
pub fn apply_mask<T: Scalar>(s: &Spectrogram, m: &MaskSet<T>) -> Result<Vec<Spectrogram>> {
    if m.frames() != s.n_frames() || m.bins() != s.n_bins() {
        return shape_err(format!(
            "mask {}x{} vs spectrogram {}x{}",
            m.frames(),
            m.bins(),
            s.n_frames(),
            s.n_bins()
        ));
    }
    m.iter()
        .map(|mask| {
            let data = s
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&c, &g)| c * g.as_f64())
                .collect();
            s.with_data(data)
        })
        .collect()
}
