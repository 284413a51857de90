//! Flag, config-file and default resolution.
//!
//! Every command reads the same flat `key = value` file, so a single file can
//! drive data synthesis, training and separation. Flags are written into the
//! parsed map before it is applied, which gives them precedence.

use std::fs;
use std::path::Path;

use moesep::config::KvMap;
use moesep::conformer::ConformerConfig;
use moesep::css::{DEFAULT_HOP_SECONDS, DEFAULT_WINDOW_SECONDS};
use moesep::train::TrainConfig;
use moesep::{Error, Result};

/// Flags that may override config-file keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experts: Option<usize>,
    pub mmoe: bool,
    pub capacity_factor: Option<f64>,
    pub window_s: Option<f64>,
    pub hop_s: Option<f64>,
    pub steps: Option<usize>,
    pub count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub model: ConformerConfig,
    pub train: TrainConfig,
    pub window_s: f64,
    pub hop_s: f64,
    /// Mixtures written by `synth-data`.
    pub count: usize,
}

pub const DEFAULT_COUNT: usize = 100;

impl Settings {
    pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut map = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                KvMap::parse(&text)?
            }
            None => KvMap::default(),
        };
        if o.mmoe {
            map.insert("moe", "mmoe");
        } else if o.experts.is_some() || o.capacity_factor.is_some() {
            // asking for experts turns a dense configuration into a MoE one
            let tag = map.take::<String>("moe")?;
            let tag = match tag.as_deref() {
                None | Some("none") => "moe".to_owned(),
                Some(t) => t.to_owned(),
            };
            map.insert("moe", tag);
        }
        if let Some(n) = o.experts {
            map.insert("experts", n);
        }
        if let Some(cf) = o.capacity_factor {
            map.insert("capacity_factor", cf);
        }
        if let Some(w) = o.window_s {
            map.insert("window_s", w);
        }
        if let Some(h) = o.hop_s {
            map.insert("hop_s", h);
        }
        if let Some(s) = o.steps {
            map.insert("total_steps", s);
        }
        if let Some(c) = o.count {
            map.insert("count", c);
        }

        let mut model = ConformerConfig::default();
        model.apply(&mut map)?;
        let mut train = TrainConfig::default();
        train.apply(&mut map)?;
        let window_s = map.take("window_s")?.unwrap_or(DEFAULT_WINDOW_SECONDS);
        let hop_s = map.take("hop_s")?.unwrap_or(DEFAULT_HOP_SECONDS);
        let count = map.take("count")?.unwrap_or(DEFAULT_COUNT);
        map.finish()?;

        if !(window_s > 0.0 && hop_s > 0.0 && hop_s <= window_s) {
            return Err(Error::Config(format!(
                "need 0 < hop_s <= window_s, got window {window_s} s and hop {hop_s} s"
            )));
        }
        if count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        Ok(Self {
            model,
            train,
            window_s,
            hop_s,
            count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use moesep::conformer::MoeVariant;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_without_config() {
        let s = Settings::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(s.model, ConformerConfig::default());
        assert_eq!(s.train, TrainConfig::default());
        assert_eq!((s.window_s, s.hop_s), (2.4, 0.8));
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let f = write("moe = moe\nexperts = 8\ncapacity_factor = 2.0\nwindow_s = 3.0\n");
        let from_file = Settings::resolve(Some(f.path()), &Overrides::default()).unwrap();
        let e = from_file.model.moe.experts().unwrap();
        assert_eq!(
            (e.experts, e.capacity_factor, from_file.window_s),
            (8, 2.0, 3.0)
        );
        assert_eq!(from_file.hop_s, 0.8);

        let o = Overrides {
            experts: Some(2),
            window_s: Some(1.6),
            ..Overrides::default()
        };
        let both = Settings::resolve(Some(f.path()), &o).unwrap();
        let e = both.model.moe.experts().unwrap();
        assert_eq!((e.experts, e.capacity_factor, both.window_s), (2, 2.0, 1.6));
    }

    #[test]
    fn expert_flags_enable_moe() {
        let o = Overrides {
            experts: Some(4),
            ..Overrides::default()
        };
        let s = Settings::resolve(None, &o).unwrap();
        assert!(matches!(s.model.moe, MoeVariant::Moe(e) if e.experts == 4));
        let f = write("moe = none\n");
        let s = Settings::resolve(Some(f.path()), &Overrides { mmoe: true, ..o }).unwrap();
        assert!(s.model.moe.is_multi_gate());
    }

    #[test]
    fn bad_config_is_rejected() {
        for text in [
            "nonsense = 1\n",
            "experts = many\n",
            "window_s = 1\nhop_s = 2\n",
            "count = 0\n",
        ] {
            let f = write(text);
            let err = Settings::resolve(Some(f.path()), &Overrides::default()).unwrap_err();
            assert_eq!(err.category(), "config-invalid", "{text}");
        }
        let err = Settings::resolve(Some(Path::new("/nonexistent.conf")), &Overrides::default())
            .unwrap_err();
        assert_eq!(err.category(), "config-invalid");
    }
}
