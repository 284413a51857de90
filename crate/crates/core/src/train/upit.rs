use itertools::Itertools;

use crate::dsp::{MaskSet, MelFilterbank};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{Scalar, Tensor};

/// Largest speaker count the exhaustive search accepts (`6! = 720`).
pub const MAX_SPEAKERS: usize = 6;

/// Winning channel-to-reference mapping and every candidate's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationAssignment {
    /// Output channel `i` is matched with reference `perm[i]`.
    pub perm: Vec<usize>,
    /// Candidate losses in lexicographic permutation order.
    pub loss_per_perm: Vec<f64>,
}

pub struct UpitOutput<T> {
    pub loss: T,
    pub assignment: PermutationAssignment,
    /// `∂loss/∂M_i` under the winning permutation.
    pub grads: Vec<Tensor<T>>,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    (0..n).permutations(n).collect()
}

/// `min_p Σ_i ‖Mel(M_i ⊙ |Y|) − Mel(|X_{p_i}|)‖²` by exhaustive search.
/// Ties resolve to the lexicographically first permutation.
pub fn upit_loss<T: Scalar>(
    masks: &MaskSet<T>,
    mix_mag: &Tensor<T>,
    refs: &[Tensor<T>],
    fb: &MelFilterbank,
) -> Result<UpitOutput<T>> {
    let s = masks.channels();
    if s > MAX_SPEAKERS {
        return invalid(format!("{s} speakers exceeds the limit of {MAX_SPEAKERS}"));
    }
    if refs.len() != s {
        return shape_err(format!("{s} masks but {} references", refs.len()));
    }
    let shape = [masks.frames(), masks.bins()];
    if mix_mag.shape() != shape || refs.iter().any(|r| r.shape() != shape) {
        return shape_err(format!("magnitudes must all be {}x{}", shape[0], shape[1]));
    }
    let est: Vec<Tensor<T>> = masks
        .iter()
        .map(|m| fb.apply(&m.zip_map(mix_mag, |a, b| a * b)?))
        .collect::<Result<_>>()?;
    let target: Vec<Tensor<T>> = refs.iter().map(|r| fb.apply(r)).collect::<Result<_>>()?;
    let mut pair = vec![vec![T::zero(); s]; s];
    for (i, e) in est.iter().enumerate() {
        for (j, t) in target.iter().enumerate() {
            pair[i][j] = e
                .data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .fold(T::zero(), |acc, v| acc + v);
        }
    }
    let perms = permutations(s);
    let costs: Vec<T> = perms
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold(T::zero(), |acc, (i, &j)| acc + pair[i][j])
        })
        .collect();
    let mut best = 0;
    for (k, c) in costs.iter().enumerate() {
        if *c < costs[best] {
            best = k;
        }
    }
    let perm = perms[best].clone();
    let weights = fb.weights().cast::<T>();
    let grads = (0..s)
        .map(|i| {
            let diff = est[i].zip_map(&target[perm[i]], |a, b| (a - b) * T::of(2.0))?;
            diff.matmul_t(false, &weights, true)?
                .zip_map(mix_mag, |g, y| g * y)
        })
        .collect::<Result<_>>()?;
    Ok(UpitOutput {
        loss: costs[best],
        assignment: PermutationAssignment {
            perm,
            loss_per_perm: costs.iter().map(|c| c.as_f64()).collect(),
        },
        grads,
    })
}
