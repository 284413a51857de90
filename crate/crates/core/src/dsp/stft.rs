//! Hann-windowed STFT analysis and overlap-add synthesis.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{invalid, shape_err, Error, Result};

pub const DEFAULT_FRAME_LENGTH: usize = 512;
pub const DEFAULT_HOP_LENGTH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex one-sided spectrogram stored row-major as `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    frame_length: usize,
    hop_length: usize,
    window: WindowKind,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        data: Vec<Complex64>,
        n_frames: usize,
        frame_length: usize,
        hop_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        check_framing(frame_length, hop_length)?;
        let bins = frame_length / 2 + 1;
        if n_frames == 0 || data.len() != n_frames * bins {
            return shape_err(format!(
                "spectrogram needs {n_frames} x {bins} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            data,
            n_frames,
            frame_length,
            hop_length,
            window: WindowKind::Hann,
            sample_rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let f = self.n_bins();
        &self.data[t * f..(t + 1) * f]
    }

    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.n_bins() + f]
    }

    /// Magnitudes as a row-major `frames x bins` vector.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Same framing, new values.
    pub fn with_data(&self, data: Vec<Complex64>) -> Result<Self> {
        Self::new(
            data,
            self.n_frames,
            self.frame_length,
            self.hop_length,
            self.sample_rate,
        )
    }

    /// Energy of the windowed frames recovered from the one-sided spectrum
    /// (Parseval): `Σ_t Σ_n (w[n] x_t[n])²`.
    pub fn energy(&self) -> f64 {
        let n = self.frame_length;
        let last = self.n_bins() - 1;
        let mut total = 0.0;
        for t in 0..self.n_frames {
            for (k, c) in self.frame(t).iter().enumerate() {
                let w = if k == 0 || k == last { 1.0 } else { 2.0 };
                total += w * c.norm_sqr();
            }
        }
        total / n as f64
    }
}

fn check_framing(frame: usize, hop: usize) -> Result<()> {
    if frame < 4 || frame % 4 != 0 {
        return invalid(format!(
            "frame length {frame} must be a positive multiple of 4"
        ));
    }
    if hop != frame / 2 && hop != frame / 4 {
        return invalid(format!(
            "hop {hop} is not COLA with a {frame}-sample Hann window (use {} or {})",
            frame / 2,
            frame / 4
        ));
    }
    Ok(())
}

/// Number of frames for a signal of `len` samples: `1 + ⌊(len − frame)/hop⌋`,
/// or one zero-padded frame for signals shorter than a frame.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len <= frame {
        1
    } else {
        1 + (len - frame) / hop
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// STFT without centring. The final partial frame is dropped unless the
/// signal is shorter than one frame, in which case it is zero-padded.
pub fn stft(w: &Waveform, frame_length: usize, hop_length: usize) -> Result<Spectrogram> {
    check_framing(frame_length, hop_length)?;
    if w.is_empty() {
        return invalid("empty waveform");
    }
    if w.samples().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stft input"));
    }
    let x = w.samples();
    let n_frames = frame_count(x.len(), frame_length, hop_length);
    let bins = frame_length / 2 + 1;
    let window = hann(frame_length);
    let fft = plans(frame_length).forward;
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_length];
    let mut data = Vec::with_capacity(n_frames * bins);
    for t in 0..n_frames {
        let start = t * hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = x.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Spectrogram::new(data, n_frames, frame_length, hop_length, w.sample_rate())
}

/// Overlap-add synthesis normalised by the summed squared window. Output has
/// `T·hop + (frame − hop)` samples; samples where the window sum vanishes
/// (the very first one) come out as zero.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let n = s.frame_length();
    let hop = s.hop_length();
    let bins = s.n_bins();
    let out_len = s.n_frames() * hop + (n - hop);
    let window = hann(n);
    let ifft = plans(n).inverse;
    let mut out = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..s.n_frames() {
        let frame = s.frame(t);
        buf[..bins].copy_from_slice(frame);
        for k in bins..n {
            buf[k] = frame[n - k].conj();
        }
        // Imaginary parts of the DC and Nyquist bins cannot survive a real
        // inverse transform.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    for (o, &ws) in out.iter_mut().zip(&wsum) {
        *o = if ws > 1e-12 { *o / ws } else { 0.0 };
    }
    Waveform::new(out, s.sample_rate())
}

/// Framing used by the separation pipeline: the signal is padded so every
/// original sample sits under a full set of overlapping frames, which makes
/// [`Framing::synthesize`] an exact inverse of [`Framing::analyze`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    pub frame_length: usize,
    pub hop_length: usize,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_length: DEFAULT_FRAME_LENGTH,
            hop_length: DEFAULT_HOP_LENGTH,
        }
    }
}

impl Framing {
    pub fn new(frame_length: usize, hop_length: usize) -> Result<Self> {
        check_framing(frame_length, hop_length)?;
        Ok(Self {
            frame_length,
            hop_length,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.frame_length - self.hop_length
    }

    /// Padded length for a signal of `len` samples.
    fn padded_len(&self, len: usize) -> usize {
        let min = self.front_pad() + len + self.front_pad();
        let over = min - self.frame_length;
        self.frame_length + over.div_ceil(self.hop_length) * self.hop_length
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        frame_count(self.padded_len(len), self.frame_length, self.hop_length)
    }

    pub fn analyze(&self, w: &Waveform) -> Result<Spectrogram> {
        if w.is_empty() {
            return invalid("empty waveform");
        }
        let padded = w.delayed(self.front_pad(), self.padded_len(w.len()));
        stft(&padded, self.frame_length, self.hop_length)
    }

    pub fn synthesize(&self, s: &Spectrogram, len: usize) -> Result<Waveform> {
        let y = istft(s)?;
        Ok(y.segment(self.front_pad(), len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = stft(&Waveform::silence(400, 16_000), 256, 128).unwrap();
        assert_eq!((s.n_frames(), s.n_bins()), (2, 129));
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
        let y = istft(&s).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centred_sinusoid_matches_analytic_hann_dft() {
        // cos(2π k0 n / N + φ) with an integer number of cycles per frame:
        // |X[k0]| = A·N/4, |X[k0±1]| = A·N/8, every other bin is exactly zero.
        let (n, hop, k0, amp) = (256usize, 128usize, 20usize, 0.7);
        let x: Vec<f64> = (0..2048)
            .map(|i| amp * (2.0 * std::f64::consts::PI * (k0 * i) as f64 / n as f64 + 0.3).cos())
            .collect();
        let s = stft(&Waveform::new(x, 16_000).unwrap(), n, hop).unwrap();
        for t in 0..s.n_frames() {
            let mags: Vec<f64> = s.frame(t).iter().map(|c| c.norm()).collect();
            let peak = mags.iter().copied().fold(0.0, f64::max);
            assert!((mags[k0] - amp * n as f64 / 4.0).abs() < 1e-9);
            assert!((mags[k0 - 1] - amp * n as f64 / 8.0).abs() < 1e-9);
            assert!((mags[k0 + 1] - amp * n as f64 / 8.0).abs() < 1e-9);
            for (k, &m) in mags.iter().enumerate() {
                if k.abs_diff(k0) >= 2 {
                    assert!(20.0 * (m / peak).log10() <= -30.0 || m == 0.0, "bin {k}");
                }
            }
        }
    }

    #[test]
    fn raw_roundtrip_interior() {
        let x = random_wave(4000, 1);
        for hop in [128, 64] {
            let y = istft(&stft(&x, 256, hop).unwrap()).unwrap();
            let covered = y.len().min(x.len());
            for i in 128..covered - 128 {
                assert!((x.samples()[i] - y.samples()[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn padded_roundtrip_is_exact_everywhere() {
        let x = random_wave(4000, 2);
        let fr = Framing::new(256, 128).unwrap();
        let y = fr.synthesize(&fr.analyze(&x).unwrap(), x.len()).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(fr.analyze(&x).unwrap().n_frames(), fr.frames_for(4000));
    }

    #[test]
    fn parseval_energy_matches_windowed_signal() {
        let x = random_wave(3000, 3);
        let s = stft(&x, 256, 128).unwrap();
        let w = hann(256);
        let mut direct = 0.0;
        for t in 0..s.n_frames() {
            for i in 0..256 {
                let v = x.samples()[t * 128 + i] * w[i];
                direct += v * v;
            }
        }
        assert!((s.energy() - direct).abs() / direct < 0.01);
    }

    #[test]
    fn rejects_bad_framing_and_input() {
        let x = random_wave(1000, 4);
        assert!(stft(&x, 256, 100).is_err());
        assert!(stft(&x, 256, 256).is_err());
        assert!(stft(&Waveform::silence(0, 16_000), 256, 128).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 16_000).is_err());
    }
}
