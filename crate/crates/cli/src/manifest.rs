//! `manifest.json` (deterministic) and `timings.json` (wall times).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use lorentz_ot::io::{read_json, write_json};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Hash of the config the stage ran under.
    pub config_hash: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub pass: bool,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, StageEntry>,
}

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

#[allow(clippy::too_many_arguments)]
/// Adds or replaces one stage; the top-level config is the latest one used.
pub fn record(out: &Path, cfg: &RunConfig, stage: &str, artifacts: Vec<String>, pass: bool, summary: serde_json::Value, seconds: f64) -> Result<()> {
    let hash = cfg.hash();
    let path = out.join(MANIFEST);
    let mut m = read_json::<RunManifest>(&path).unwrap_or_else(|_| RunManifest {
        config_hash: hash.clone(),
        config: cfg.clone(),
        stages: BTreeMap::new(),
    });
    m.config_hash = hash.clone();
    m.config = cfg.clone();
    m.stages.insert(
        stage.to_string(),
        StageEntry {
            config_hash: hash,
            artifacts,
            pass,
            summary,
        },
    );
    write_json(&path, &m)?;

    let tpath = out.join(TIMINGS);
    let mut t: BTreeMap<String, f64> = read_json(&tpath).unwrap_or_default();
    t.insert(stage.to_string(), seconds);
    write_json(&tpath, &t)?;
    Ok(())
}
