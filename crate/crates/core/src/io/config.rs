use std::path::Path;

use super::{atomic_write, read_file};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

/// Reads a TOML run config. Missing keys take their defaults; unknown keys are rejected.
pub fn read_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn render_config(cfg: &PipelineConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn write_config(path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<()> {
    atomic_write(path.as_ref(), render_config(cfg)?.as_bytes())
}
