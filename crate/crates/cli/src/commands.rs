use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use moesep::bench::{bench_rtf, compare_rtf, BenchParams, RtfReport};
use moesep::conformer::{load_model, save_model, ConformerConfig, SsModel};
use moesep::css::{separate_long, WindowPlan};
use moesep::dsp::wav::{read_wav, write_wav};
use moesep::dsp::Waveform;
use moesep::mixsim::{
    load_sample, make_batches, read_manifest, write_dataset, DeskCorpus, MixtureSample,
    MANIFEST_NAME,
};
use moesep::moe::trace::{summarize, write_csv, RoutingTraceRow};
use moesep::nn::gradcheck::run_layer_suite;
use moesep::nn::{Ctx, Params, Tensor};
use moesep::train::{model_gradcheck, write_log_line, Trainer};
use moesep::{Error, Result};
use serde_json::json;

use crate::settings::Settings;

pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const LOG_NAME: &str = "train_log.jsonl";

fn corpus(s: &Settings) -> DeskCorpus {
    DeskCorpus {
        source_seconds: s.train.sample_seconds,
        ..DeskCorpus::default()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn synth_data(s: &Settings, out: &Path, seed: u64) -> Result<()> {
    let corpus = corpus(s);
    let base = seed.wrapping_mul(1_000_003);
    let samples = (0..s.count as u64)
        .map(|k| corpus.sample(base.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let manifest = write_dataset(out, &samples)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Cycles over a manifest's samples, reshuffling batches every epoch.
struct ManifestFeed {
    samples: Vec<MixtureSample>,
    batch_size: usize,
    class_pure: bool,
    seed: u64,
    epoch: Option<usize>,
    batches: Vec<Vec<usize>>,
}

impl ManifestFeed {
    fn open(dir: &Path, batch_size: usize, class_pure: bool, seed: u64) -> Result<Self> {
        let manifest = if dir.is_dir() {
            dir.join(MANIFEST_NAME)
        } else {
            dir.to_owned()
        };
        let base = manifest.parent().unwrap_or(Path::new("."));
        let samples = read_manifest(&manifest)?
            .iter()
            .map(|r| load_sample(base, r))
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(Error::Manifest(format!(
                "{} lists no samples",
                manifest.display()
            )));
        }
        Ok(Self {
            samples,
            batch_size,
            class_pure,
            seed,
            epoch: None,
            batches: Vec::new(),
        })
    }

    fn batch(&mut self, step: usize) -> Result<Vec<MixtureSample>> {
        let mut k = step - 1;
        let mut epoch = 0;
        loop {
            if self.epoch != Some(epoch) {
                let seed = self.seed.wrapping_add(epoch as u64);
                self.batches = make_batches(&self.samples, self.batch_size, self.class_pure, seed)?;
                self.epoch = Some(epoch);
            }
            if k < self.batches.len() {
                return Ok(self.batches[k]
                    .iter()
                    .map(|&i| self.samples[i].clone())
                    .collect());
            }
            k -= self.batches.len();
            epoch += 1;
        }
    }
}

pub fn train(
    s: &Settings,
    out: &Path,
    data: Option<&Path>,
    trace: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let class_pure = s.model.moe.is_multi_gate();
    let batch_size = s.train.batch_size;
    let mut feed = data
        .map(|d| ManifestFeed::open(d, batch_size, class_pure, seed))
        .transpose()?;
    let corpus = corpus(s);
    let (model, params) = SsModel::init::<f32>(s.model.clone(), seed)?;
    let mut trainer = Trainer::new(model, params, s.train.clone(), seed)?;

    create_dir(out)?;
    let mut log = BufWriter::new(File::create(out.join(LOG_NAME))?);
    let mut trace_out = trace.map(File::create).transpose()?.map(BufWriter::new);
    let mut trace_rows: Vec<RoutingTraceRow> = Vec::new();
    let every = s.train.checkpoint_every;
    let total = s.train.total_steps;
    log::info!(
        "training {} parameters for {total} steps ({})",
        trainer.params.numel(),
        s.model.moe.tag()
    );
    trainer.run(
        move |step| match feed.as_mut() {
            Some(f) => f.batch(step),
            None => corpus.batch(step, batch_size, class_pure, seed),
        },
        |t, m| {
            write_log_line(&mut log, m)?;
            if trace_out.is_some() {
                trace_rows.extend(m.routing.iter().cloned());
            }
            if m.step % 50 == 0 || m.step == total {
                log::info!(
                    "step {} upit {:.4} aux {:.4} lr {:.2e}",
                    m.step,
                    m.upit,
                    m.aux,
                    m.lr
                );
            }
            if every > 0 && m.step % every == 0 && m.step != total {
                save_model(
                    &out.join(format!("step_{}.ckpt", m.step)),
                    &t.model,
                    &t.params,
                )?;
            }
            Ok(())
        },
    )?;
    log.flush()?;
    if let Some(w) = trace_out.as_mut() {
        write_csv(w, &trace_rows)?;
        w.flush()?;
    }
    let path = out.join(CHECKPOINT_NAME);
    save_model(&path, &trainer.model, &trainer.params)?;
    println!("{}", path.display());
    Ok(())
}

pub fn output_paths(input: &Path, out: &Path, channels: usize) -> Vec<PathBuf> {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    (0..channels)
        .map(|i| out.join(format!("{stem}.ch{i}.wav")))
        .collect()
}

pub fn separate(s: &Settings, input: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let (model, params) = load_model::<f32>(checkpoint)?;
    let audio = read_wav(input)?;
    let plan = WindowPlan::from_seconds(audio.len(), s.window_s, s.hop_s, audio.sample_rate())?;
    let signals = separate_long(&model, &params, &audio, &plan)?;
    create_dir(out)?;
    for (path, w) in output_paths(input, out, signals.len()).iter().zip(&signals) {
        write_wav(path, w)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn rtf_json(r: &RtfReport) -> serde_json::Value {
    json!({ "mean_rtf": r.mean_rtf, "p50": r.p50, "p95": r.p95 })
}

pub fn bench(s: &Settings, checkpoint: Option<&Path>, p: &BenchParams) -> Result<()> {
    match checkpoint {
        Some(path) => {
            let (model, params) = load_model::<f32>(path)?;
            println!("{}", rtf_json(&bench_rtf(&model, &params, p)?));
        }
        None => {
            // the configured model against its dense counterpart
            let dense_cfg = ConformerConfig {
                moe: moesep::conformer::MoeVariant::Dense,
                ..s.model.clone()
            };
            let (dense, pd) = SsModel::init::<f32>(dense_cfg, p.seed)?;
            let (moe, pm) = SsModel::init::<f32>(s.model.clone(), p.seed)?;
            let (rd, rm, inc) = compare_rtf((&dense, &pd), (&moe, &pm), p)?;
            let report = json!({
                "dense": rtf_json(&rd),
                "model": rtf_json(&rm),
                "variant": s.model.moe.tag(),
                "rtf_increase": inc,
                "macs_per_token_delta": moe.macs_per_token_at(1) as i64 - dense.macs_per_token_at(1) as i64,
            });
            println!("{report}");
        }
    }
    Ok(())
}

/// Runs the finite-difference suite; `Ok(false)` when any check fails.
pub fn gradcheck(seed: u64) -> Result<bool> {
    let mut reports = run_layer_suite(seed)?;
    reports.push(model_gradcheck(seed)?);
    let mut all = true;
    for r in &reports {
        all &= r.passed();
        println!(
            "{} {} max_rel_error={:.3e} tolerance={:.0e} checked={}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked
        );
    }
    Ok(all)
}

/// Per MoE block, the fraction of tokens routed to each expert.
pub fn routing_fractions(rows: &[RoutingTraceRow]) -> Vec<(usize, Vec<f64>)> {
    let mut layers: Vec<usize> = rows.iter().map(|r| r.layer).collect();
    layers.dedup();
    layers
        .into_iter()
        .map(|layer| {
            let counts: Vec<usize> = rows
                .iter()
                .filter(|r| r.layer == layer)
                .map(|r| r.token_count)
                .collect();
            let total: usize = counts.iter().sum();
            (
                layer,
                counts
                    .iter()
                    .map(|&c| c as f64 / total.max(1) as f64)
                    .collect(),
            )
        })
        .collect()
}

pub fn routing_report(
    s: &Settings,
    checkpoint: &Path,
    input: Option<&Path>,
    trace: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let (model, params) = load_model::<f32>(checkpoint)?;
    if model.moe_layers().next().is_none() {
        return Err(Error::InvalidArgument(
            "model has no expert layers to report on".into(),
        ));
    }
    let audio: Vec<Waveform> = match input {
        Some(path) => vec![read_wav(path)?],
        None => {
            let corpus = corpus(s);
            (0..s.count.min(16) as u64)
                .map(|k| corpus.sample(seed.wrapping_add(k)).map(|m| m.mixture))
                .collect::<Result<_>>()?
        }
    };
    let framing = model.framing()?;
    let mut mags = Vec::with_capacity(audio.len());
    let mut segments = Vec::with_capacity(audio.len());
    for w in &audio {
        let spec = framing.analyze(w)?;
        segments.push(spec.n_frames());
        let data = spec.magnitude().into_iter().map(|v| v as f32).collect();
        mags.push(Tensor::from_vec(&[spec.n_frames(), spec.n_bins()], data)?);
    }
    let out = model.forward(
        &params as &Params<f32>,
        &Tensor::vstack(&mags)?,
        &mut Ctx::eval(segments),
        None,
    )?;
    let rows: Vec<RoutingTraceRow> = out
        .decisions
        .iter()
        .flat_map(|(layer, d)| summarize(0, *layer, d))
        .collect();
    if let Some(path) = trace {
        let mut w = BufWriter::new(File::create(path)?);
        write_csv(&mut w, &rows)?;
        w.flush()?;
    }
    for (layer, f) in routing_fractions(&rows) {
        let dropped: usize = rows
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.dropped_count)
            .sum();
        println!(
            "{}",
            json!({ "layer": layer, "f": f, "sum": f.iter().sum::<f64>(), "dropped": dropped })
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(layer: usize, expert: usize, token_count: usize) -> RoutingTraceRow {
        RoutingTraceRow {
            step: 0,
            layer,
            expert,
            token_count,
            mean_prob: 0.5,
            dropped_count: 0,
        }
    }

    #[test]
    fn fractions_sum_to_one_per_layer() {
        let rows = vec![row(0, 0, 3), row(0, 1, 1), row(2, 0, 0), row(2, 1, 7)];
        let f = routing_fractions(&rows);
        assert_eq!(f, vec![(0, vec![0.75, 0.25]), (2, vec![0.0, 1.0])]);
    }

    #[test]
    fn output_names_use_the_input_stem() {
        let p = output_paths(Path::new("/a/meeting.wav"), Path::new("out"), 2);
        assert_eq!(
            p,
            vec![
                PathBuf::from("out/meeting.ch0.wav"),
                PathBuf::from("out/meeting.ch1.wav")
            ]
        );
    }
}
