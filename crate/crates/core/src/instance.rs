//! Random transport instances on `R^{1,n}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::{GeometrySpec, SpacetimePoint};
use crate::transport::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceMode {
    /// Sources at time 0, targets at `time_gap`, both in a spatial ball of
    /// radius `rho`; `time_gap > 2 rho` makes every pair chronological.
    Chronological,
    /// A chronological instance plus one forced null-separated pair far away.
    Mixed,
    /// Sources and targets on the same time slice: no causal coupling exists.
    Spacelike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n_sources: usize,
    pub n_targets: usize,
    pub spatial_dim: usize,
    pub mode: InstanceMode,
    pub rho: f64,
    pub time_gap: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub const DEFAULT_RHO: f64 = 0.5;
    pub const DEFAULT_TIME_GAP: f64 = 3.0;

    pub fn chronological(n: usize, spatial_dim: usize, seed: u64) -> Self {
        Self {
            n_sources: n,
            n_targets: n,
            spatial_dim,
            mode: InstanceMode::Chronological,
            rho: Self::DEFAULT_RHO,
            time_gap: Self::DEFAULT_TIME_GAP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_targets == 0 {
            return Err(Error::InvalidInput("cloud sizes must be positive".into()));
        }
        if self.spatial_dim == 0 {
            return Err(Error::InvalidInput("spatial dimension must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho = {} must be positive", self.rho)));
        }
        if self.mode != InstanceMode::Spacelike && !(self.time_gap > 2.0 * self.rho) {
            return Err(Error::InvalidInput(format!(
                "time gap {} must exceed 2 rho = {}",
                self.time_gap,
                2.0 * self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub geometry: GeometrySpec,
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
}

fn ball_point(rng: &mut ChaCha8Rng, time: f64, dim: usize, rho: f64) -> SpacetimePoint {
    loop {
        let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-rho..rho)).collect();
        if z.iter().map(|v| v * v).sum::<f64>() < rho * rho {
            let mut c = Vec::with_capacity(dim + 1);
            c.push(time);
            c.extend(z);
            return SpacetimePoint::new(c);
        }
    }
}

pub fn generate(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.spatial_dim;
    let target_time = match spec.mode {
        InstanceMode::Spacelike => 0.0,
        _ => spec.time_gap,
    };
    let mut xs: Vec<SpacetimePoint> = (0..spec.n_sources).map(|_| ball_point(&mut rng, 0.0, d, spec.rho)).collect();
    let mut ys: Vec<SpacetimePoint> = (0..spec.n_targets)
        .map(|_| ball_point(&mut rng, target_time, d, spec.rho))
        .collect();
    if spec.mode == InstanceMode::Mixed {
        // Null pair placed beyond causal reach of the clouds; every coordinate
        // is an integer, so the pair is exactly null in floating point.
        let far = (spec.rho + spec.time_gap).ceil() + 4.0;
        let mut x = vec![0.0; d + 1];
        x[1] = far;
        let mut y = vec![spec.time_gap.ceil(); d + 1];
        y[1..].iter_mut().for_each(|c| *c = 0.0);
        y[1] = far + y[0];
        xs.push(SpacetimePoint::new(x));
        ys.push(SpacetimePoint::new(y));
    }
    let mu0 = DiscreteMeasure::uniform(xs)?;
    let mu1 = DiscreteMeasure::uniform(ys)?;
    Ok(Instance {
        geometry: GeometrySpec::Minkowski { spatial_dim: d },
        mu0,
        mu1,
    })
}
