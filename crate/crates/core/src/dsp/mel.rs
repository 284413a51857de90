use crate::error::{invalid, shape_err, Result};
use crate::nn::{Scalar, Tensor};

pub const DEFAULT_MEL_BANDS: usize = 80;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, stored as an `F x B` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Tensor<f64>,
    f_min: f64,
    f_max: f64,
    sample_rate: u32,
}

impl MelFilterbank {
    pub fn new(
        sample_rate: u32,
        n_fft: usize,
        n_bands: usize,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_bands == 0 || n_fft < 2 {
            return invalid("mel filterbank needs at least one band and two FFT points");
        }
        if !(0.0..nyquist + 1e-9).contains(&f_min) || f_max <= f_min || f_max > nyquist + 1e-9 {
            return invalid(format!(
                "mel range [{f_min}, {f_max}] outside [0, {nyquist}]"
            ));
        }
        let bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_bands + 1) as f64))
            .collect();
        let mut weights = Tensor::zeros(&[bins, n_bands]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            for b in 0..n_bands {
                let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights.set(k, b, w);
            }
        }
        Ok(Self {
            weights,
            f_min,
            f_max,
            sample_rate,
        })
    }

    /// Default bank: 80 bands spanning 0 Hz to Nyquist.
    pub fn standard(sample_rate: u32, n_fft: usize) -> Result<Self> {
        Self::new(
            sample_rate,
            n_fft,
            DEFAULT_MEL_BANDS,
            0.0,
            sample_rate as f64 / 2.0,
        )
    }

    /// Arbitrary non-negative `F x B` weights.
    pub fn from_weights(weights: Tensor<f64>, sample_rate: u32) -> Result<Self> {
        if weights.shape().len() != 2 {
            return shape_err("filterbank weights must be a matrix");
        }
        if weights.data().iter().any(|&w| !(w >= 0.0)) {
            return invalid("filterbank weights must be non-negative");
        }
        Ok(Self {
            weights,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            sample_rate,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bands(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Tensor<f64> {
        &self.weights
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// `mag · weights` for a `T x F` magnitude matrix.
    pub fn apply<T: Scalar>(&self, mag: &Tensor<T>) -> Result<Tensor<T>> {
        if mag.cols() != self.n_bins() {
            return shape_err(format!(
                "mel: {} bins vs filterbank {}",
                mag.cols(),
                self.n_bins()
            ));
        }
        mag.matmul(&self.weights.cast())
    }
}

/// Mel transform of a `T x F` magnitude matrix.
pub fn mel_transform<T: Scalar>(mag: &Tensor<T>, fb: &MelFilterbank) -> Result<Tensor<T>> {
    fb.apply(mag)
}
