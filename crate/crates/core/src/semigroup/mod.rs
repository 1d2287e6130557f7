//! Discrete forward and backward Lax-Oleinik operators
//!
//! `T_t u(x) = inf_y u(y) + c_t(y, x)` and `T̂_t u(x) = sup_y u(y) - c_t(x, y)`,
//! with the infimum and supremum taken over a finite [`CandidateSet`]. A
//! [`PotentialField`] only has values at its sites; everywhere else it is
//! `+inf` for the forward operator and `-inf` for the backward one, which is
//! the right reading for potentials supported on a finite measure. Candidates
//! that are not sites of the input field are skipped.
//!
//! [`regularized_pair`] builds `Phi_s = T̂_τ T_{s+τ} phi` and
//! `Psi_t = T_τ T̂_{1-t+τ} psi`. The inner evolution of a finitely supported
//! potential is exact, and the outer extremum over all of `M` is refined from
//! the best candidate by a continuous maximin solve (see [`maximin`]).

pub mod maximin;

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{superlinearity_constant, ExtendedCost};
use crate::spacetime::{Geometry, SpacetimePoint};
use crate::transport::{DiscreteMeasure, DynamicalCoupling};

/// Slack added to the search radius of pruned forward evaluations.
pub const SEARCH_MARGIN: f64 = 1e-9;

/// One operator application in the history of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ProvenanceStep {
    Raw { label: String },
    Forward { t: f64 },
    Backward { t: f64 },
}

/// Operator chain in application order, the first step is always `Raw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<ProvenanceStep>,
}

impl Provenance {
    pub fn raw(label: impl Into<String>) -> Self {
        Self {
            steps: vec![ProvenanceStep::Raw { label: label.into() }],
        }
    }

    pub fn then(&self, step: ProvenanceStep) -> Self {
        let mut steps = self.steps.clone();
        steps.push(step);
        Self { steps }
    }

    /// Operators applied after the raw field, in application order.
    pub fn operators(&self) -> &[ProvenanceStep] {
        &self.steps[1..]
    }
}

impl fmt::Display for Provenance {
    /// `raw`, `forward(t)`, `backward(t)`, or a composition such as
    /// `backward(0.1)∘forward(0.4)` (rightmost applied first).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops = self.operators();
        if ops.is_empty() {
            return write!(f, "raw");
        }
        let parts: Vec<String> = ops
            .iter()
            .rev()
            .map(|s| match s {
                ProvenanceStep::Forward { t } => format!("forward({t})"),
                ProvenanceStep::Backward { t } => format!("backward({t})"),
                ProvenanceStep::Raw { label } => label.clone(),
            })
            .collect();
        write!(f, "{}", parts.join("∘"))
    }
}

/// Samples of a potential at finitely many sites.
#[derive(Debug, Clone)]
pub struct PotentialField {
    sites: Vec<SpacetimePoint>,
    values: Vec<f64>,
    argmin: Vec<Option<usize>>,
    provenance: Provenance,
    lipschitz: Option<f64>,
    index: HashMap<Vec<u64>, usize>,
}

impl PartialEq for PotentialField {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
            && self.values.iter().map(|v| v.to_bits()).eq(other.values.iter().map(|v| v.to_bits()))
            && self.argmin == other.argmin
            && self.provenance == other.provenance
            && self.lipschitz == other.lipschitz
    }
}

impl PotentialField {
    pub fn new(
        sites: Vec<SpacetimePoint>,
        values: Vec<f64>,
        argmin: Vec<Option<usize>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if sites.len() != values.len() || sites.len() != argmin.len() {
            return Err(Error::InvalidInput("field arrays differ in length".into()));
        }
        if let Some(first) = sites.first() {
            if let Some(p) = sites.iter().find(|p| p.dim() != first.dim()) {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: p.dim(),
                });
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("NaN field value".into()));
        }
        let mut index = HashMap::with_capacity(sites.len());
        for (k, p) in sites.iter().enumerate() {
            index.entry(p.key()).or_insert(k);
        }
        Ok(Self {
            sites,
            values,
            argmin,
            provenance,
            lipschitz: None,
            index,
        })
    }

    /// A field with no history.
    pub fn raw(sites: Vec<SpacetimePoint>, values: Vec<f64>, label: &str) -> Result<Self> {
        let n = sites.len();
        Self::new(sites, values, vec![None; n], Provenance::raw(label))
    }

    /// A potential on the support of a measure, e.g. a Kantorovich dual.
    pub fn on_support(mu: &DiscreteMeasure, values: &[f64], label: &str) -> Result<Self> {
        if values.len() != mu.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a measure with {} atoms",
                values.len(),
                mu.len()
            )));
        }
        Self::raw(mu.points().to_vec(), values.to_vec(), label)
    }

    /// Attach a Lipschitz constant (in `h`), which enables search pruning.
    pub fn with_lipschitz(mut self, lip: f64) -> Self {
        self.lipschitz = Some(lip);
        self
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[SpacetimePoint] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index into the candidate set that attained each value, if any.
    pub fn argmin(&self) -> &[Option<usize>] {
        &self.argmin
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// Value at an exact site, `None` off the sites.
    pub fn get(&self, x: &SpacetimePoint) -> Option<f64> {
        self.index.get(&x.key()).map(|&k| self.values[k])
    }

    pub fn site_index(&self, x: &SpacetimePoint) -> Option<usize> {
        self.index.get(&x.key()).copied()
    }

    /// `u + a` with the same history.
    pub fn shifted(&self, a: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v += a;
        }
        out
    }

    pub(crate) fn replace_values(mut self, values: Vec<f64>, argmin: Vec<Option<usize>>) -> Self {
        self.values = values;
        self.argmin = argmin;
        self
    }
}

/// Points over which the Lax-Oleinik extrema are taken.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    points: Vec<SpacetimePoint>,
}

impl CandidateSet {
    /// Drops exact duplicates, keeping the first occurrence.
    pub fn new(points: Vec<SpacetimePoint>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let points = points.into_iter().filter(|p| seen.insert(p.key())).collect();
        Self { points }
    }

    /// Union of the supports.
    pub fn from_measures(measures: &[&DiscreteMeasure]) -> Self {
        Self::new(measures.iter().flat_map(|m| m.points().iter().cloned()).collect())
    }

    pub fn points(&self) -> &[SpacetimePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn union(&self, extra: impl IntoIterator<Item = SpacetimePoint>) -> Self {
        let mut pts = self.points.clone();
        pts.extend(extra);
        Self::new(pts)
    }
}

/// Uniform `h`-metric boxes: `ceil(2 radius / spacing)` cell-centred points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radius: f64,
    pub spacing: f64,
}

impl GridSpec {
    pub fn points_per_axis(&self) -> usize {
        (2.0 * self.radius / self.spacing).ceil().max(1.0) as usize
    }

    /// Cell-centred box around `center`, in lexicographic order.
    pub fn box_around(&self, center: &SpacetimePoint) -> Vec<SpacetimePoint> {
        let m = self.points_per_axis();
        let cell = 2.0 * self.radius / m as f64;
        let offsets: Vec<f64> = (0..m).map(|k| -self.radius + (k as f64 + 0.5) * cell).collect();
        lattice(center, &offsets)
    }
}

/// `center + (o_1, ..., o_d)` over all offset tuples, last coordinate fastest.
pub(crate) fn lattice(center: &SpacetimePoint, offsets: &[f64]) -> Vec<SpacetimePoint> {
    let d = center.dim();
    let m = offsets.len();
    let total = m.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let c: Vec<f64> = (0..d).map(|k| center.0[k] + offsets[idx[k]]).collect();
        out.push(SpacetimePoint::new(c));
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

/// `base ∪ {γ(r) : γ in Π, r in times} ∪` grid boxes around the curve endpoints
/// and samples. Order: base, then per curve its samples, then the boxes.
pub fn enrich_candidates(
    base: &CandidateSet,
    pi: &DynamicalCoupling,
    times: &[f64],
    grid: Option<GridSpec>,
) -> CandidateSet {
    let mut samples = Vec::new();
    for c in &pi.curves {
        for &r in times {
            samples.push(c.curve.position(r * c.curve.duration));
        }
    }
    let mut extra = samples.clone();
    if let Some(spec) = grid {
        let mut centers: Vec<SpacetimePoint> = base.points().to_vec();
        centers.extend(samples);
        let centers = CandidateSet::new(centers);
        for c in centers.points() {
            extra.extend(spec.box_around(c));
        }
    }
    base.union(extra)
}

/// Candidates (by index) that are sites of `u`, with the site value.
fn live_candidates(u: &PotentialField, candidates: &CandidateSet) -> Vec<(usize, f64)> {
    candidates
        .points()
        .iter()
        .enumerate()
        .filter_map(|(k, y)| u.get(y).map(|v| (k, v)))
        .collect()
}

fn search_radius(g: &dyn Geometry, u: &PotentialField, t: f64) -> Option<f64> {
    let lip = u.lipschitz()?;
    let c = superlinearity_constant(g, lip + 1.0).ok()?;
    Some(c.c_of_k * t + SEARCH_MARGIN)
}

/// `u(y) + c`, with `-inf + inf = +inf`.
fn forward_term(u: f64, c: ExtendedCost) -> f64 {
    match c {
        ExtendedCost::Infinite => f64::INFINITY,
        ExtendedCost::Finite(c) => {
            if u == f64::INFINITY {
                f64::INFINITY
            } else {
                u + c
            }
        }
    }
}

/// `u(y) - c`, with `inf - inf = -inf`.
fn backward_term(u: f64, c: ExtendedCost) -> f64 {
    match c {
        ExtendedCost::Infinite => f64::NEG_INFINITY,
        ExtendedCost::Finite(c) => {
            if u == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                u - c
            }
        }
    }
}

/// `T_t u` at each target, as an inf over candidates in the causal past.
pub fn forward_lax_oleinik(
    g: &dyn Geometry,
    u: &PotentialField,
    t: f64,
    targets: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let live = live_candidates(u, candidates);
    let radius = search_radius(g, u, t);
    let pts = candidates.points();
    let (values, argmin): (Vec<f64>, Vec<Option<usize>>) = targets
        .par_iter()
        .map(|x| {
            let mut best = f64::INFINITY;
            let mut arg = None;
            for &(k, uy) in &live {
                let y = &pts[k];
                if let Some(r) = radius {
                    if g.h_distance(y, x) > r {
                        continue;
                    }
                }
                let v = forward_term(uy, g.cost_coords(t, y.coords(), x.coords()));
                if v < best {
                    best = v;
                    arg = Some(k);
                }
            }
            (best, arg)
        })
        .unzip();
    PotentialField::new(
        targets.to_vec(),
        values,
        argmin,
        u.provenance().then(ProvenanceStep::Forward { t }),
    )
}

/// `T̂_t u` at each target, as a sup over candidates in the causal future.
pub fn backward_lax_oleinik(
    g: &dyn Geometry,
    u: &PotentialField,
    t: f64,
    targets: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let live = live_candidates(u, candidates);
    let pts = candidates.points();
    let (values, argmax): (Vec<f64>, Vec<Option<usize>>) = targets
        .par_iter()
        .map(|x| {
            let mut best = f64::NEG_INFINITY;
            let mut arg = None;
            for &(k, uy) in &live {
                let v = backward_term(uy, g.cost_coords(t, x.coords(), pts[k].coords()));
                if v > best {
                    best = v;
                    arg = Some(k);
                }
            }
            (best, arg)
        })
        .unzip();
    PotentialField::new(
        targets.to_vec(),
        values,
        argmax,
        u.provenance().then(ProvenanceStep::Backward { t }),
    )
}

/// `phi_s = T_s phi` at the evaluation points.
pub fn evolve_phi(
    g: &dyn Geometry,
    phi: &PotentialField,
    s: f64,
    eval_points: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidInput(format!("s = {s} outside (0, 1)")));
    }
    forward_lax_oleinik(g, phi, s, eval_points, candidates)
}

/// `psi_t = T̂_{1-t} psi` at the evaluation points.
pub fn evolve_psi(
    g: &dyn Geometry,
    psi: &PotentialField,
    t: f64,
    eval_points: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidInput(format!("t = {t} outside (0, 1)")));
    }
    backward_lax_oleinik(g, psi, 1.0 - t, eval_points, candidates)
}

/// Upper bound on admissible `tau` for the pair `(s, t)`.
pub fn tau_bound(s: f64, t: f64) -> f64 {
    s.min(1.0 - t).min((t - s) / 2.0)
}

/// The regularized pair `(Phi_s, Psi_t)` at its evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedPair {
    pub phi_s: PotentialField,
    pub psi_t: PotentialField,
    pub s: f64,
    pub t: f64,
    pub tau: f64,
}

/// Build `Phi_s` at `eval_s` and `Psi_t` at `eval_t`.
///
/// `phi` and `psi` must be fields on the supports of `mu_0` and `mu_1`, and the
/// candidates must contain those supports.
#[allow(clippy::too_many_arguments)]
pub fn regularized_pair(
    g: &dyn Geometry,
    phi: &PotentialField,
    psi: &PotentialField,
    s: f64,
    t: f64,
    tau: f64,
    eval_s: &[SpacetimePoint],
    eval_t: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<RegularizedPair> {
    if !(0.0 < s && s < t && t < 1.0) {
        return Err(Error::InvalidInput(format!("need 0 < s < t < 1, got s = {s}, t = {t}")));
    }
    let bound = tau_bound(s, t);
    if !(tau > 0.0 && tau < bound) {
        return Err(Error::TauOutOfRange { tau, bound });
    }
    let phi_s = regularize_phi(g, phi, s, tau, eval_s, candidates)?;
    let psi_t = regularize_psi(g, psi, t, tau, eval_t, candidates)?;
    Ok(RegularizedPair { phi_s, psi_t, s, t, tau })
}

fn support_branches(field: &PotentialField, sign: f64) -> Vec<maximin::Branch> {
    field
        .sites()
        .iter()
        .zip(field.values())
        .filter(|(_, v)| v.is_finite())
        .map(|(p, v)| maximin::Branch {
            anchor: p.clone(),
            offset: sign * v,
        })
        .collect()
}

/// `T̂_τ T_{s+τ} phi` at the evaluation points.
pub fn regularize_phi(
    g: &dyn Geometry,
    phi: &PotentialField,
    s: f64,
    tau: f64,
    eval_points: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    let inner = forward_lax_oleinik(g, phi, s + tau, candidates.points(), candidates)?;
    let discrete = backward_lax_oleinik(g, &inner, tau, eval_points, candidates)?;
    let problem = maximin::Problem {
        side: maximin::Side::Future,
        branches: support_branches(phi, 1.0),
        long: s + tau,
        short: tau,
    };
    Ok(refine(g, &problem, discrete, candidates, 1.0))
}

/// `T_τ T̂_{1-t+τ} psi` at the evaluation points.
pub fn regularize_psi(
    g: &dyn Geometry,
    psi: &PotentialField,
    t: f64,
    tau: f64,
    eval_points: &[SpacetimePoint],
    candidates: &CandidateSet,
) -> Result<PotentialField> {
    let inner = backward_lax_oleinik(g, psi, 1.0 - t + tau, candidates.points(), candidates)?;
    let discrete = forward_lax_oleinik(g, &inner, tau, eval_points, candidates)?;
    let problem = maximin::Problem {
        side: maximin::Side::Past,
        branches: support_branches(psi, -1.0),
        long: 1.0 - t + tau,
        short: tau,
    };
    Ok(refine(g, &problem, discrete, candidates, -1.0))
}

/// Replace each discrete value by the continuous maximin value when that is
/// better. `sign` maps the field to the maximin orientation (`+1` for a sup).
fn refine(
    g: &dyn Geometry,
    problem: &maximin::Problem,
    discrete: PotentialField,
    candidates: &CandidateSet,
    sign: f64,
) -> PotentialField {
    let (values, argmin): (Vec<f64>, Vec<Option<usize>>) = discrete
        .sites()
        .par_iter()
        .zip(discrete.values().par_iter().zip(discrete.argmin().par_iter()))
        .map(|(x, (&v, &arg))| {
            let warm = arg.map(|k| candidates.points()[k].clone());
            match maximin::solve(g, problem, x, warm.as_ref()) {
                Some(sol) if sign * sol.value > sign * v => {
                    (sign * sol.value, None)
                }
                _ => (v, arg),
            }
        })
        .unzip();
    discrete.replace_values(values, argmin)
}
