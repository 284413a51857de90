//! Scale-invariant SNR and its permutation-invariant improvement.

use crate::error::{shape_err, Result};
use crate::train::permutations;

/// Floor added to energies so silent signals give finite values.
const EPS: f64 = 1e-12;

/// `10 log10(‖s_t‖² / ‖e‖²)` with `s_t` the projection of the zero-mean
/// estimate onto the zero-mean reference.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return shape_err(format!(
            "si-snr: {} vs {} samples",
            estimate.len(),
            reference.len()
        ));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
    let (me, mr) = (mean(estimate), mean(reference));
    let e: Vec<f64> = estimate.iter().map(|v| v - me).collect();
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let rr: f64 = r.iter().map(|v| v * v).sum::<f64>() + EPS;
    let scale = dot / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&r) {
        let t = scale * b;
        target += t * t;
        noise += (a - t) * (a - t);
    }
    Ok(10.0 * ((target + EPS) / (noise + EPS)).log10())
}

/// Mean SI-SNR under the best estimate-to-reference permutation, with that
/// permutation (`perm[i]` is the reference matched to estimate `i`).
pub fn pit_si_snr(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let s = references.len();
    if estimates.len() != s {
        return shape_err(format!("{} estimates for {s} references", estimates.len()));
    }
    let mut table = vec![vec![0.0; s]; s];
    for (i, e) in estimates.iter().enumerate() {
        for (j, r) in references.iter().enumerate() {
            table[i][j] = si_snr(e, r)?;
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for p in permutations(s) {
        let v = p.iter().enumerate().map(|(i, &j)| table[i][j]).sum::<f64>() / s as f64;
        if v > best.0 {
            best = (v, p);
        }
    }
    Ok(best)
}

/// SI-SNR gain of the separated outputs over using the mixture itself as
/// every speaker's estimate.
pub fn si_snr_improvement(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    mixture: &[f64],
) -> Result<f64> {
    let (sep, _) = pit_si_snr(estimates, references)?;
    let base = references
        .iter()
        .map(|r| si_snr(mixture, r))
        .sum::<Result<f64>>()?
        / references.len() as f64;
    Ok(sep - base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_invariant_and_perfect_is_large() {
        let r: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin()).collect();
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert!(si_snr(&scaled, &r).unwrap() > 100.0);
    }

    #[test]
    fn orthogonal_noise_at_known_ratio() {
        // sin and cos over whole periods are orthogonal; 0.1 amplitude → 20 dB
        let n = 400;
        let r: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / n as f64).sin())
            .collect();
        let e: Vec<f64> = (0..n)
            .map(|i| r[i] + 0.1 * (2.0 * std::f64::consts::PI * 9.0 * i as f64 / n as f64).cos())
            .collect();
        assert!((si_snr(&e, &r).unwrap() - 20.0).abs() < 1e-6);
    }

    #[test]
    fn pit_picks_swap_and_improvement_is_positive() {
        let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.2).sin()).collect();
        let b: Vec<f64> = (0..300).map(|i| (i as f64 * 1.3).cos()).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (v, p) = pit_si_snr(&[b.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(p, vec![1, 0]);
        assert!(v > 100.0);
        assert!(si_snr_improvement(&[b, a.clone()], &[a, mix.clone()], &mix).is_ok());
    }
}
