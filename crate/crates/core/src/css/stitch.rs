use super::plan::WindowPlan;
use crate::dsp::Waveform;
use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::train::permutations;

/// Permutation `π` of the current window's channels minimizing
/// `Σ_i ‖prev_i − cur_{π(i)}‖²` over the shared region; ties go to the
/// lexicographically first candidate.
pub fn align_permutation(prev: &[Tensor<f64>], cur: &[Tensor<f64>]) -> Result<Vec<usize>> {
    let s = prev.len();
    if cur.len() != s || prev.iter().chain(cur).any(|t| t.shape() != prev[0].shape()) {
        return shape_err("overlap regions must have matching channels and shapes");
    }
    let mut cost = vec![vec![0.0; s]; s];
    for (i, p) in prev.iter().enumerate() {
        for (j, c) in cur.iter().enumerate() {
            cost[i][j] = p
                .data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    for p in permutations(s) {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if v < best.0 {
            best = (v, p);
        }
    }
    Ok(best.1)
}

/// Sequential alignment state carried from window to window.
#[derive(Clone, Debug, PartialEq)]
pub struct StitchState {
    /// Output stream `i` takes channel `perm[i]` of the latest window.
    pub perm: Vec<usize>,
    /// Aligned magnitudes of the latest window, one per stream.
    pub prev: Option<Vec<Tensor<f64>>>,
    pub ramp: usize,
}

impl StitchState {
    pub fn new(speakers: usize, ramp: usize) -> Self {
        Self {
            perm: (0..speakers).collect(),
            prev: None,
            ramp,
        }
    }

    /// Aligns a window given its per-channel magnitudes; `shift` is the
    /// window hop in frames. Returns the permutation to apply.
    pub fn advance(&mut self, mags: Vec<Tensor<f64>>, shift: usize) -> Result<Vec<usize>> {
        let perm = match &self.prev {
            None => (0..mags.len()).collect(),
            Some(prev) => {
                let frames = prev[0].rows().saturating_sub(shift).min(mags[0].rows());
                if frames == 0 {
                    (0..mags.len()).collect()
                } else {
                    let p: Vec<_> = prev.iter().map(|t| t.slice_rows(shift, frames)).collect();
                    let c: Vec<_> = mags.iter().map(|t| t.slice_rows(0, frames)).collect();
                    align_permutation(&p, &c)?
                }
            }
        };
        self.prev = Some(perm.iter().map(|&j| mags[j].clone()).collect());
        self.perm = perm.clone();
        Ok(perm)
    }
}

/// Per-sample weight of window `k`: linear ramps up across the overlap with
/// the previous window and down across the overlap with the next.
fn window_weights(plan: &WindowPlan, k: usize) -> Vec<f64> {
    let ov = plan.overlap();
    let first = k == 0;
    let last = k + 1 == plan.len();
    (0..plan.window)
        .map(|j| {
            let up = if first || j >= ov {
                1.0
            } else {
                (j as f64 + 0.5) / ov as f64
            };
            let tail = plan.window - 1 - j;
            let down = if last || tail >= ov {
                1.0
            } else {
                (tail as f64 + 0.5) / ov as f64
            };
            up.min(down)
        })
        .collect()
}

/// Normalized weighted overlap-add of aligned window outputs.
/// `windows[k][i]` is stream `i` of window `k`, `plan.window` samples long.
pub fn stitch(
    windows: &[Vec<Vec<f64>>],
    plan: &WindowPlan,
    sample_rate: u32,
) -> Result<Vec<Waveform>> {
    if windows.len() != plan.len() {
        return shape_err(format!(
            "{} window outputs for {} windows",
            windows.len(),
            plan.len()
        ));
    }
    let s = windows.first().map_or(0, Vec::len);
    if windows.iter().flatten().any(|c| c.len() != plan.window)
        || windows.iter().any(|w| w.len() != s)
    {
        return shape_err("every window needs the same channels of window length");
    }
    let mut acc = vec![vec![0.0; plan.total]; s];
    let mut norm = vec![0.0; plan.total];
    for (k, (win, &off)) in windows.iter().zip(&plan.offsets).enumerate() {
        let w = window_weights(plan, k);
        for j in 0..plan.window.min(plan.total.saturating_sub(off)) {
            norm[off + j] += w[j];
            for (i, ch) in win.iter().enumerate() {
                acc[i][off + j] += w[j] * ch[j];
            }
        }
    }
    acc.into_iter()
        .map(|mut ch| {
            for (v, n) in ch.iter_mut().zip(&norm) {
                *v /= n;
            }
            Waveform::new(ch, sample_rate)
        })
        .collect()
}
