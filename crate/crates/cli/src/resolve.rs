use std::path::{Path, PathBuf};

use decon_core::config::{apply_overrides, load_config};
use decon_core::report::write_json;
use decon_core::RunConfig;
use serde::Serialize;

use crate::failure::{Classify, CliResult, Failure, Kind};

pub const SEED_ENV: &str = "DECON_SEED";
pub const RESOLVED_FILE: &str = "resolved-config.json";

/// What `resolved-config.json` records.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub config_path: Option<PathBuf>,
    pub env_seed: Option<u64>,
    pub overrides: Vec<String>,
    pub config: RunConfig,
}

pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::new(Kind::Config, format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// File, then `DECON_SEED`, then overrides in order.
pub fn resolve(config: Option<&Path>, overrides: &[String]) -> CliResult<Resolved> {
    let base = match config {
        Some(p) => load_config(p).or_fail(Kind::Config, "config")?,
        None => RunConfig::default(),
    };
    let env_seed = env_seed()?;
    let seeded = RunConfig { seed: env_seed.unwrap_or(base.seed), ..base };
    let cfg = apply_overrides(&seeded, overrides).or_fail(Kind::Config, "override")?;
    cfg.validate().or_fail(Kind::Config, "config")?;
    Ok(Resolved { config_path: config.map(Path::to_path_buf), env_seed, overrides: overrides.to_vec(), config: cfg })
}

pub fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).or_fail(Kind::Config, &format!("cannot create {}", dir.display()))
}

pub fn write_resolved(dir: &Path, r: &Resolved) -> CliResult<()> {
    write_json(&dir.join(RESOLVED_FILE), r).or_fail(Kind::Usage, "writing resolved config")
}
