use std::io::Write;
use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use super::loss::{aux_weights, moe_loss, AuxReduction};
use super::optim::{clip_global_norm, AdamW, DEFAULT_CLIP_NORM};
use super::schedule::LrSchedule;
use super::upit::upit_loss;
use crate::class::OverlapClass;
use crate::config::KvMap;
use crate::conformer::SsModel;
use crate::dsp::{Framing, MelFilterbank, DEFAULT_SAMPLE_RATE};
use crate::error::{invalid, Error, Result};
use crate::mixsim::MixtureSample;
use crate::moe::trace::{summarize, RoutingTraceRow};
use crate::moe::{LoadStats, DEFAULT_ALPHA};
use crate::nn::{Ctx, Gradients, Params, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub sample_seconds: f64,
    pub clip_norm: f64,
    pub aux_reduction: AuxReduction,
    pub mel_bands: usize,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Prepared batches buffered ahead of the optimizer.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_steps: 200,
            total_steps: 2000,
            weight_decay: 1e-3,
            batch_size: 4,
            alpha: DEFAULT_ALPHA,
            sample_seconds: 4.0,
            clip_norm: DEFAULT_CLIP_NORM,
            aux_reduction: AuxReduction::Mean,
            mel_bands: 80,
            checkpoint_every: 500,
            queue_depth: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.peak_lr > 0.0) || self.weight_decay < 0.0 || self.alpha < 0.0 {
            return bad("peak_lr must be positive, weight_decay and alpha non-negative");
        }
        if self.warmup_steps == 0 || self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return bad("need 0 < warmup_steps <= total_steps");
        }
        if self.batch_size == 0 || self.mel_bands == 0 || self.queue_depth == 0 {
            return bad("batch_size, mel_bands and queue_depth must be positive");
        }
        if !(self.sample_seconds > 0.0) || !(self.clip_norm > 0.0) {
            return bad("sample_seconds and clip_norm must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            warmup: self.warmup_steps,
            total: self.total_steps,
        }
    }

    pub fn apply(&mut self, map: &mut KvMap) -> Result<()> {
        map.take_into("peak_lr", &mut self.peak_lr)?;
        map.take_into("warmup_steps", &mut self.warmup_steps)?;
        map.take_into("total_steps", &mut self.total_steps)?;
        map.take_into("weight_decay", &mut self.weight_decay)?;
        map.take_into("batch_size", &mut self.batch_size)?;
        map.take_into("alpha", &mut self.alpha)?;
        map.take_into("sample_seconds", &mut self.sample_seconds)?;
        map.take_into("clip_norm", &mut self.clip_norm)?;
        map.take_into("aux_reduction", &mut self.aux_reduction)?;
        map.take_into("mel_bands", &mut self.mel_bands)?;
        map.take_into("checkpoint_every", &mut self.checkpoint_every)?;
        map.take_into("queue_depth", &mut self.queue_depth)?;
        self.validate()
    }
}

/// A minibatch after STFT, ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    /// Stacked mixture magnitudes, `[Σ T_b × F]`.
    pub mix_mag: Tensor<f32>,
    pub segments: Vec<usize>,
    /// Per sample, one magnitude matrix per reference.
    pub refs: Vec<Vec<Tensor<f32>>>,
    /// The shared class when all samples agree.
    pub class: Option<OverlapClass>,
}

fn magnitudes(framing: &Framing, w: &crate::dsp::Waveform) -> Result<Tensor<f32>> {
    let s = framing.analyze(w)?;
    Tensor::from_vec(
        &[s.n_frames(), s.n_bins()],
        s.magnitude().into_iter().map(|v| v as f32).collect(),
    )
}

pub fn prepare_batch(samples: &[MixtureSample], framing: &Framing) -> Result<PreparedBatch> {
    let Some(first) = samples.first() else {
        return invalid("empty batch");
    };
    let mut mags = Vec::with_capacity(samples.len());
    let mut refs = Vec::with_capacity(samples.len());
    let mut segments = Vec::with_capacity(samples.len());
    for s in samples {
        let m = magnitudes(framing, &s.mixture)?;
        segments.push(m.rows());
        mags.push(m);
        refs.push(
            s.references
                .iter()
                .map(|r| magnitudes(framing, r))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let class = samples
        .iter()
        .all(|s| s.overlap_class == first.overlap_class)
        .then_some(first.overlap_class);
    Ok(PreparedBatch {
        mix_mag: Tensor::vstack(&mags)?,
        segments,
        refs,
        class,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean per-sample uPIT loss.
    pub upit: f64,
    /// Reduced load-balancing loss.
    pub aux: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Aggregate per-expert routed fractions (empty for dense models).
    pub f: Vec<f64>,
    pub dropped_frac: f64,
    /// Per MoE block and expert routing summary of this step.
    pub routing: Vec<RoutingTraceRow>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub upit: f64,
    pub aux: f64,
    pub lr: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub dropped_frac: f64,
}

impl From<&StepMetrics> for LogRecord {
    fn from(m: &StepMetrics) -> Self {
        let f_min = m.f.iter().cloned().fold(f64::INFINITY, f64::min);
        let f_max = m.f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            step: m.step,
            upit: m.upit,
            aux: m.aux,
            lr: m.lr,
            f_min: if m.f.is_empty() { 1.0 } else { f_min },
            f_max: if m.f.is_empty() { 1.0 } else { f_max },
            dropped_frac: m.dropped_frac,
        }
    }
}

pub fn write_log_line<W: Write>(w: &mut W, m: &StepMetrics) -> Result<()> {
    serde_json::to_writer(&mut *w, &LogRecord::from(m))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Owns the model, its parameters and optimizer state.
pub struct Trainer {
    pub model: SsModel,
    pub params: Params<f32>,
    pub config: TrainConfig,
    pub seed: u64,
    optim: AdamW<f32>,
    grads: Gradients<f32>,
    fb: MelFilterbank,
    step: usize,
}

impl Trainer {
    pub fn new(
        mut model: SsModel,
        params: Params<f32>,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        model.set_alpha(config.alpha);
        let frame = model.config.frame_length();
        let fb = MelFilterbank::new(DEFAULT_SAMPLE_RATE, frame, config.mel_bands, 0.0, 8_000.0)?;
        Ok(Self {
            optim: AdamW::new(&params, config.weight_decay),
            grads: Gradients::zeros_like(&params),
            model,
            params,
            config,
            seed,
            fb,
            step: 0,
        })
    }

    /// Replaces the loss filterbank (its bin count must match the model).
    pub fn with_filterbank(mut self, fb: MelFilterbank) -> Result<Self> {
        if fb.n_bins() != self.model.config.input_dim {
            return invalid(format!(
                "filterbank has {} bins, model expects {}",
                fb.n_bins(),
                self.model.config.input_dim
            ));
        }
        self.fb = fb;
        Ok(self)
    }

    /// Gradients of the most recent step, after clipping.
    pub fn gradients(&self) -> &Gradients<f32> {
        &self.grads
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn framing(&self) -> Result<Framing> {
        self.model.framing()
    }

    /// Forward, uPIT + load loss, backward, clip and one AdamW update.
    pub fn train_step(&mut self, batch: &PreparedBatch) -> Result<StepMetrics> {
        let s = self.model.config.num_speakers;
        if self.model.config.moe.is_multi_gate() && batch.class.is_none() {
            return invalid(
                "multi-gate training needs every sample in a batch to share an overlap class",
            );
        }
        if batch.refs.iter().any(|r| r.len() != s) {
            return invalid(format!("every sample needs {s} references"));
        }
        let step = self.step + 1;
        let lr = self.config.schedule().at(step);
        let mut ctx = Ctx::train(
            self.seed ^ (step as u64).wrapping_mul(0x9e37_79b9),
            batch.segments.clone(),
        );
        let out = self
            .model
            .forward(&self.params, &batch.mix_mag, &mut ctx, batch.class)?;
        let sets = out.mask_sets(&batch.segments, s)?;
        let n = batch.segments.len() as f32;
        let bins = self.model.config.input_dim;
        let mut dmasks = Tensor::zeros(out.masks.shape());
        let mut upit = 0.0;
        let mut row = 0;
        for (b, (set, refs)) in sets.iter().zip(&batch.refs).enumerate() {
            let len = batch.segments[b];
            let mix = batch.mix_mag.slice_rows(row, len);
            let u = upit_loss(set, &mix, refs, &self.fb)?;
            upit += u.loss as f64;
            for (i, g) in u.grads.iter().enumerate() {
                for t in 0..len {
                    let dst = &mut dmasks.row_mut(row + t)[i * bins..(i + 1) * bins];
                    for (d, v) in dst.iter_mut().zip(g.row(t)) {
                        *d = v / n;
                    }
                }
            }
            row += len;
        }
        upit /= n as f64;
        let aux = moe_loss(&out.stats, self.config.aux_reduction);
        if !upit.is_finite() || !aux.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let coefs: Vec<f32> = aux_weights(&out.stats, self.config.aux_reduction)
            .into_iter()
            .map(|w| w as f32)
            .collect();
        let load = LoadStats::aggregate(&out.stats);
        let routing = out
            .decisions
            .iter()
            .flat_map(|(layer, d)| summarize(step, *layer, d))
            .collect();
        self.grads.zero();
        self.model
            .backward(&self.params, out.cache, &dmasks, &coefs, &mut self.grads)?;
        let grad_norm = clip_global_norm(&mut self.grads, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.optim.step(&mut self.params, &self.grads, lr)?;
        self.step = step;
        Ok(StepMetrics {
            step,
            upit,
            aux,
            lr,
            grad_norm,
            f: load.as_ref().map(|l| l.f.clone()).unwrap_or_default(),
            dropped_frac: load.map_or(0.0, |l| l.dropped as f64 / l.tokens.max(1) as f64),
            routing,
        })
    }

    /// Trains until `total_steps`, preparing batches on a producer thread.
    /// `make_batch(step)` supplies the raw samples for a 1-based step and
    /// `on_step` sees every step's metrics (logging, checkpointing).
    pub fn run<F, G>(&mut self, make_batch: F, mut on_step: G) -> Result<()>
    where
        F: FnMut(usize) -> Result<Vec<MixtureSample>> + Send,
        G: FnMut(&Trainer, &StepMetrics) -> Result<()>,
    {
        let framing = self.framing()?;
        let (start, total) = (self.step + 1, self.config.total_steps);
        let (tx, rx) = sync_channel::<Result<PreparedBatch>>(self.config.queue_depth);
        std::thread::scope(|scope| {
            let mut make_batch = make_batch;
            scope.spawn(move || {
                for step in start..=total {
                    let batch = make_batch(step).and_then(|s| prepare_batch(&s, &framing));
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        break;
                    }
                }
            });
            for _ in start..=total {
                let batch = rx
                    .recv()
                    .map_err(|_| invalid::<()>("batch producer stopped").unwrap_err())??;
                let metrics = self.train_step(&batch)?;
                on_step(self, &metrics)?;
            }
            Ok(())
        })
    }
}
