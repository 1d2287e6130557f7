//! Run configuration: a JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lorentz_ot::instance::{InstanceMode, InstanceSpec};
use lorentz_ot::pipeline::RegularizeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_sources: usize,
    pub n_targets: usize,
    pub spatial_dim: usize,
    pub mode: InstanceMode,
    pub rho: f64,
    pub time_gap: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_sources: 5,
            n_targets: 5,
            spatial_dim: 1,
            mode: InstanceMode::Chronological,
            rho: InstanceSpec::DEFAULT_RHO,
            time_gap: InstanceSpec::DEFAULT_TIME_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    /// Instance to solve; `<out>/instance.json` when absent.
    pub instance: Option<PathBuf>,
    pub regularize: RegularizeConfig,
    pub interpolate_times: Vec<f64>,
    /// Samples per curve in `curves.csv`.
    pub curve_samples: usize,
    /// Random fields for the semigroup checks in `verify`.
    pub random_fields: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            gen: GenConfig::default(),
            instance: None,
            regularize: RegularizeConfig::default(),
            interpolate_times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            curve_samples: 21,
            random_fields: 20,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub tau_schedule: Option<Vec<f64>>,
    pub force: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = ov.seed {
            cfg.seed = seed;
        }
        if let Some(s) = ov.s {
            cfg.regularize.s = s;
        }
        if let Some(t) = ov.t {
            cfg.regularize.t = t;
        }
        if let Some(sched) = &ov.tau_schedule {
            cfg.regularize.tau_schedule = sched.clone();
        }
        cfg.regularize.force |= ov.force;
        Ok(cfg)
    }

    /// Range checks on `s`, `t` and the interpolation times. The schedule is
    /// checked by the core, which reports `TauOutOfRange`.
    pub fn validate_times(&self) -> Result<()> {
        let (s, t) = (self.regularize.s, self.regularize.t);
        if !(0.0 < s && s < t && t < 1.0) {
            bail!("need 0 < s < t < 1, got s = {s}, t = {t}");
        }
        if self.interpolate_times.iter().any(|r| !(0.0..=1.0).contains(r)) {
            bail!("interpolation times must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn instance_spec(&self) -> InstanceSpec {
        InstanceSpec {
            n_sources: self.gen.n_sources,
            n_targets: self.gen.n_targets,
            spatial_dim: self.gen.spatial_dim,
            mode: self.gen.mode,
            rho: self.gen.rho,
            time_gap: self.gen.time_gap,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
