use std::path::{Path, PathBuf};

use super::config::ConformerConfig;
use super::model::SsModel;
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Params, Scalar};

/// The model config lives next to its checkpoint with a `.conf` extension.
pub fn config_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("conf")
}

pub fn save_model<T: Scalar>(path: &Path, model: &SsModel, params: &Params<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save(params, path)?;
    std::fs::write(config_path_for(path), model.config.to_string())?;
    Ok(())
}

/// Rebuilds the model from its sibling config and fills in the weights.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(SsModel, Params<T>)> {
    let loaded = checkpoint::load(path)?;
    let cfg_path = config_path_for(path);
    let text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
    let mut map = KvMap::parse(&text)?;
    let mut config = ConformerConfig::default();
    config.apply(&mut map)?;
    map.finish()?;
    let (model, mut params) = SsModel::init::<T>(config, 0)?;
    checkpoint::restore_into(&mut params, &loaded)?;
    Ok((model, params))
}
