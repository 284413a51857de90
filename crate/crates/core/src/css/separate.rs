use super::plan::WindowPlan;
use super::stitch::{stitch, StitchState};
use crate::conformer::SsModel;
use crate::dsp::{apply_mask, MaskSet, Waveform};
use crate::error::Result;
use crate::nn::{Params, Scalar, Tensor};

/// Separated signals of one pass plus the masked magnitudes used for
/// alignment.
pub struct Separation {
    pub signals: Vec<Waveform>,
    pub magnitudes: Vec<Tensor<f64>>,
}

/// Single pass over the whole signal: magnitudes → masks → masked complex
/// spectra with the mixture phase → inverse STFT, same length as the input.
pub fn separate_once<T: Scalar>(
    model: &SsModel,
    params: &Params<T>,
    audio: &Waveform,
) -> Result<Separation> {
    let framing = model.framing()?;
    let spec = framing.analyze(audio)?;
    let mag = Tensor::from_vec(&[spec.n_frames(), spec.n_bins()], spec.magnitude())?;
    let masks = model.infer(params, &mag.cast::<T>())?;
    let masks = MaskSet::new(masks.iter().map(|m| m.cast::<f64>()).collect())?;
    let signals = apply_mask(&spec, &masks)?
        .iter()
        .map(|s| framing.synthesize(s, audio.len()))
        .collect::<Result<Vec<_>>>()?;
    let magnitudes = masks
        .iter()
        .map(|m| m.zip_map(&mag, |a, b| a * b))
        .collect::<Result<Vec<_>>>()?;
    Ok(Separation {
        signals,
        magnitudes,
    })
}

/// Sliding-window separation with left-to-right permutation alignment and
/// crossfaded stitching. Output streams have exactly the input length.
pub fn separate_long<T: Scalar>(
    model: &SsModel,
    params: &Params<T>,
    audio: &Waveform,
    plan: &WindowPlan,
) -> Result<Vec<Waveform>> {
    let speakers = model.config.num_speakers;
    let shift = (plan.hop as f64 / model.config.hop_length as f64).round() as usize;
    let mut state = StitchState::new(speakers, plan.overlap());
    let mut outputs = Vec::with_capacity(plan.len());
    for &off in &plan.offsets {
        let chunk = audio.segment(off, plan.window);
        let sep = separate_once(model, params, &chunk)?;
        let perm = state.advance(sep.magnitudes, shift)?;
        let signals: Vec<Vec<f64>> = sep
            .signals
            .into_iter()
            .map(Waveform::into_samples)
            .collect();
        outputs.push(perm.iter().map(|&j| signals[j].clone()).collect());
    }
    stitch(&outputs, plan, audio.sample_rate())
}
