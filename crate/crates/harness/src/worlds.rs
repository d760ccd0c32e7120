//! Benchmark worlds compiled into the binary.

use wvn_core::world::{parse_world, WorldFile};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const BUILTIN: [(&str, &str); 6] = [
    ("park", include_str!("../worlds/park.toml")),
    ("woodland", include_str!("../worlds/woodland.toml")),
    ("footpath", include_str!("../worlds/footpath.toml")),
    ("hilly", include_str!("../worlds/hilly.toml")),
    ("forest", include_str!("../worlds/forest.toml")),
    ("grass", include_str!("../worlds/grass.toml")),
];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<WorldFile> {
    let src = builtin_source(name).ok_or_else(|| HarnessError::Config(format!("unknown builtin world `{name}`")))?;
    Ok(parse_world(src)?)
}

/// Resolves `builtin:<name>` or a path relative to the config file.
pub fn load(spec: &str, cfg: &ExperimentConfig) -> Result<WorldFile> {
    match spec.strip_prefix("builtin:") {
        Some(name) => builtin(name),
        None => Ok(wvn_core::world::worldfile::load_world(cfg.resolve(spec))?),
    }
}
