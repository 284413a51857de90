use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mix::MixtureSample;
use crate::class::OverlapClass;
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// One line of a dataset manifest. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub mixture_path: PathBuf,
    pub ref_paths: Vec<PathBuf>,
    pub class: OverlapClass,
    pub ratio: f64,
    pub snr: f64,
}

/// Writes every sample as WAV files plus a manifest; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[MixtureSample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(MANIFEST_NAME);
    let mut out = BufWriter::new(File::create(&path)?);
    for (i, s) in samples.iter().enumerate() {
        let mixture_path = PathBuf::from(format!("mix{i:05}.wav"));
        write_wav(&dir.join(&mixture_path), &s.mixture)?;
        let mut ref_paths = Vec::new();
        for (k, r) in s.references.iter().enumerate() {
            let p = PathBuf::from(format!("mix{i:05}.ref{k}.wav"));
            write_wav(&dir.join(&p), r)?;
            ref_paths.push(p);
        }
        let rec = ManifestRecord {
            mixture_path,
            ref_paths,
            class: s.overlap_class,
            ratio: s.overlap_ratio,
            snr: s.snr_db,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
        if rec.ref_paths.is_empty() {
            return Err(Error::Manifest(format!("line {}: no references", n + 1)));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads a record's audio. The noise is recovered as the residual
/// `mixture − Σ references` of the stored (quantized) signals.
pub fn load_sample(base: &Path, rec: &ManifestRecord) -> Result<MixtureSample> {
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mixture = read_wav(&resolve(&rec.mixture_path))?;
    let references = rec
        .ref_paths
        .iter()
        .map(|p| read_wav(&resolve(p)).map(|w| w.resized(mixture.len())))
        .collect::<Result<Vec<_>>>()?;
    let mut residual = mixture.samples().to_vec();
    for r in &references {
        for (m, v) in residual.iter_mut().zip(r.samples()) {
            *m -= v;
        }
    }
    Ok(MixtureSample {
        noise: Waveform::new(residual, mixture.sample_rate())?,
        mixture,
        references,
        overlap_class: rec.class,
        overlap_ratio: rec.ratio,
        snr_db: rec.snr,
    })
}
