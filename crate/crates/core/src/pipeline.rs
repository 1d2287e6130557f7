//! The regularization stage: from an optimal plan to `(Phi_s, Psi_t)` for
//! each `tau` of a schedule, with the calibrated-curve ladder and `C^{1,1}`
//! certificates computed along the way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::cost;
use crate::semigroup::{
    enrich_candidates, evolve_phi, evolve_psi, forward_lax_oleinik, backward_lax_oleinik, regularize_phi,
    regularize_psi, tau_bound, CandidateSet, GridSpec, PotentialField, RegularizedPair,
};
use crate::spacetime::{Geometry, SpacetimePoint};
use crate::transport::{
    check_chronological_support, displacement_interpolation, dynamical_coupling, DynamicalCoupling, KantorovichSolution,
};
use crate::verify::{c11_check, refinement_scan, BoxSpec, C11Report, C11Thresholds, RefinementReport, RegularGrid};

/// Tolerance for the ladder identities and support agreement.
pub const LADDER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizeConfig {
    pub s: f64,
    pub t: f64,
    /// Tried in order; empty means [`default_tau_schedule`].
    pub tau_schedule: Vec<f64>,
    /// Grid boxes added to the candidates around curve samples.
    pub candidate_grid: Option<GridSpec>,
    pub eval_box: BoxSpec,
    pub thresholds: C11Thresholds,
    /// Run even if the plan charges causal but non-chronological pairs.
    pub force: bool,
}

impl Default for RegularizeConfig {
    fn default() -> Self {
        Self {
            s: 0.3,
            t: 0.7,
            tau_schedule: Vec::new(),
            candidate_grid: None,
            eval_box: BoxSpec::default(),
            thresholds: C11Thresholds::default(),
            force: false,
        }
    }
}

/// `tau_0` as a fraction of the admissible bound.
pub const TAU0_FRACTION: f64 = 0.95;

/// `tau_0 = TAU0_FRACTION * bound` followed by `levels - 1` halvings.
pub fn default_tau_schedule(s: f64, t: f64, levels: usize) -> Vec<f64> {
    let mut tau = TAU0_FRACTION * tau_bound(s, t);
    (0..levels)
        .map(|_| {
            let out = tau;
            tau /= 2.0;
            out
        })
        .collect()
}

impl RegularizeConfig {
    pub fn schedule(&self) -> Vec<f64> {
        if self.tau_schedule.is_empty() {
            default_tau_schedule(self.s, self.t, 4)
        } else {
            self.tau_schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.s && self.s < self.t && self.t < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < s < t < 1, got s = {}, t = {}",
                self.s, self.t
            )));
        }
        let bound = tau_bound(self.s, self.t);
        for &tau in &self.schedule() {
            if !(tau > 0.0 && tau < bound) {
                return Err(Error::TauOutOfRange { tau, bound });
            }
        }
        Ok(())
    }
}

/// Worst residuals of the calibrated-curve identities over all curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    /// `phi_{s+τ}(γ(s+τ)) - phi(γ(0)) - c_{s+τ}(γ(0), γ(s+τ))`.
    pub forward_inner: f64,
    /// `Phi_s(γ(s)) - phi(γ(0)) - c_s(γ(0), γ(s))`.
    pub forward_outer: f64,
    /// `psi_{t-τ}(γ(t-τ)) - phi(γ(0)) - c_{t-τ}(γ(0), γ(t-τ))`.
    pub backward_inner: f64,
    /// `Psi_t(γ(t)) - phi(γ(0)) - c_t(γ(0), γ(t))`.
    pub backward_outer: f64,
    /// `Psi_t(γ(t)) - Phi_s(γ(s)) - c_{t-s}(γ(s), γ(t))`.
    pub cross: f64,
    /// `Phi_s - phi_s` on `A_s`.
    pub phi_support: f64,
    /// `Psi_t - psi_t` on `A_t`.
    pub psi_support: f64,
}

impl LadderReport {
    pub fn max(&self) -> f64 {
        [
            self.forward_inner,
            self.forward_outer,
            self.backward_inner,
            self.backward_outer,
            self.cross,
            self.phi_support,
            self.psi_support,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max() <= LADDER_TOL
    }
}

#[derive(Debug, Clone)]
pub struct TauResult {
    pub tau: f64,
    /// `Phi_s` on `A_s` and `Psi_t` on `A_t`.
    pub pair: RegularizedPair,
    pub ladder: LadderReport,
    pub c11_phi: C11Report,
    pub c11_psi: C11Report,
}

impl TauResult {
    pub fn pass(&self) -> bool {
        self.ladder.pass() && self.c11_phi.pass && self.c11_psi.pass
    }
}

#[derive(Debug, Clone)]
pub struct RegularizeOutcome {
    pub dynamical: DynamicalCoupling,
    pub a_s: Vec<SpacetimePoint>,
    pub a_t: Vec<SpacetimePoint>,
    /// Unregularized `phi_s` on `A_s` and `psi_t` on `A_t`.
    pub phi_s: PotentialField,
    pub psi_t: PotentialField,
    pub results: Vec<TauResult>,
    /// Largest passing `tau`.
    pub selected: Option<f64>,
}

/// Everything needed to evaluate the regularized pair at arbitrary points.
pub struct Regularizer<'a> {
    pub g: &'a dyn Geometry,
    pub phi: PotentialField,
    pub psi: PotentialField,
    pub dynamical: DynamicalCoupling,
    pub s: f64,
    pub t: f64,
    pub base: CandidateSet,
    pub grid: Option<GridSpec>,
}

impl<'a> Regularizer<'a> {
    pub fn new(g: &'a dyn Geometry, sol: &KantorovichSolution, s: f64, t: f64, grid: Option<GridSpec>) -> Result<Self> {
        let mu0 = &sol.coupling.source;
        let mu1 = &sol.coupling.target;
        Ok(Self {
            g,
            phi: PotentialField::on_support(mu0, &sol.duals.phi, "phi")?,
            psi: PotentialField::on_support(mu1, &sol.duals.psi, "psi")?,
            dynamical: dynamical_coupling(g, &sol.coupling)?,
            s,
            t,
            base: CandidateSet::from_measures(&[mu0, mu1]),
            grid,
        })
    }

    /// Candidates for a given `tau`: supports plus the calibration-critical
    /// curve samples (and optional grid boxes around them).
    pub fn candidates(&self, tau: f64) -> CandidateSet {
        let (s, t) = (self.s, self.t);
        enrich_candidates(&self.base, &self.dynamical, &[s, s + tau, t - tau, t], self.grid)
    }

    pub fn phi_values(&self, tau: f64, cands: &CandidateSet, pts: &[SpacetimePoint]) -> Result<Vec<f64>> {
        Ok(regularize_phi(self.g, &self.phi, self.s, tau, pts, cands)?.values().to_vec())
    }

    pub fn psi_values(&self, tau: f64, cands: &CandidateSet, pts: &[SpacetimePoint]) -> Result<Vec<f64>> {
        Ok(regularize_psi(self.g, &self.psi, self.t, tau, pts, cands)?.values().to_vec())
    }

    pub fn pair(&self, tau: f64, eval_s: &[SpacetimePoint], eval_t: &[SpacetimePoint]) -> Result<RegularizedPair> {
        let cands = self.candidates(tau);
        crate::semigroup::regularized_pair(self.g, &self.phi, &self.psi, self.s, self.t, tau, eval_s, eval_t, &cands)
    }

    /// Calibrated-curve identities along every curve.
    pub fn ladder(&self, tau: f64, pair: &RegularizedPair, phi_s: &PotentialField, psi_t: &PotentialField) -> Result<LadderReport> {
        let g = self.g;
        let (s, t) = (self.s, self.t);
        let cands = self.candidates(tau);
        let pos = |r: f64| -> Vec<SpacetimePoint> {
            self.dynamical.curves.iter().map(|c| c.curve.position(r)).collect()
        };
        let (gs, gst, gtt, gt) = (pos(s), pos(s + tau), pos(t - tau), pos(t));
        let inner_f = forward_lax_oleinik(g, &self.phi, s + tau, &gst, &cands)?;
        let inner_b = backward_lax_oleinik(g, &self.psi, 1.0 - t + tau, &gtt, &cands)?;
        let mut rep = LadderReport {
            forward_inner: 0.0,
            forward_outer: 0.0,
            backward_inner: 0.0,
            backward_outer: 0.0,
            cross: 0.0,
            phi_support: 0.0,
            psi_support: 0.0,
        };
        let lookup = |f: &PotentialField, x: &SpacetimePoint| -> Result<f64> {
            f.get(x)
                .ok_or_else(|| Error::InvalidInput("curve sample missing from evaluation set".into()))
        };
        let c = |time: f64, x: &SpacetimePoint, y: &SpacetimePoint| -> Result<f64> {
            cost(g, time, x, y)?.finite().ok_or(Error::NotCausallyRelated)
        };
        for (k, wc) in self.dynamical.curves.iter().enumerate() {
            let x0 = &wc.curve.start;
            let phi0 = self.phi.values()[wc.source];
            let big_phi = lookup(&pair.phi_s, &gs[k])?;
            let big_psi = lookup(&pair.psi_t, &gt[k])?;
            let upd = |slot: &mut f64, v: f64| *slot = slot.max(v.abs());
            upd(&mut rep.forward_inner, inner_f.values()[k] - phi0 - c(s + tau, x0, &gst[k])?);
            upd(&mut rep.forward_outer, big_phi - phi0 - c(s, x0, &gs[k])?);
            upd(&mut rep.backward_inner, inner_b.values()[k] - phi0 - c(t - tau, x0, &gtt[k])?);
            upd(&mut rep.backward_outer, big_psi - phi0 - c(t, x0, &gt[k])?);
            upd(&mut rep.cross, big_psi - big_phi - c(t - s, &gs[k], &gt[k])?);
            upd(&mut rep.phi_support, big_phi - lookup(phi_s, &gs[k])?);
            upd(&mut rep.psi_support, big_psi - lookup(psi_t, &gt[k])?);
        }
        Ok(rep)
    }
}

/// Run the stage for every `tau` in the schedule.
pub fn regularize_stage(g: &dyn Geometry, sol: &KantorovichSolution, cfg: &RegularizeConfig) -> Result<RegularizeOutcome> {
    cfg.validate()?;
    if !cfg.force {
        let chrono = check_chronological_support(g, &sol.coupling)?;
        if !chrono.pass {
            return Err(Error::PreconditionChronological { fraction: chrono.fraction });
        }
    }
    let reg = Regularizer::new(g, sol, cfg.s, cfg.t, cfg.candidate_grid)?;
    let a_s = displacement_interpolation(&reg.dynamical, cfg.s)?.points().to_vec();
    let a_t = displacement_interpolation(&reg.dynamical, cfg.t)?.points().to_vec();
    let base_cands = reg.base.clone();
    let phi_s = evolve_phi(g, &reg.phi, cfg.s, &a_s, &base_cands)?;
    let psi_t = evolve_psi(g, &reg.psi, cfg.t, &a_t, &base_cands)?;
    let mut results = Vec::new();
    for tau in cfg.schedule() {
        let cands = reg.candidates(tau);
        let pair = crate::semigroup::regularized_pair(g, &reg.phi, &reg.psi, cfg.s, cfg.t, tau, &a_s, &a_t, &cands)?;
        let ladder = reg.ladder(tau, &pair, &phi_s, &psi_t)?;
        let c11_phi = c11_check(|pts| reg.phi_values(tau, &cands, pts), &a_s, cfg.eval_box, cfg.thresholds)?;
        let c11_psi = c11_check(|pts| reg.psi_values(tau, &cands, pts), &a_t, cfg.eval_box, cfg.thresholds)?;
        results.push(TauResult {
            tau,
            pair,
            ladder,
            c11_phi,
            c11_psi,
        });
    }
    let selected = results
        .iter()
        .filter(|r| r.pass())
        .map(|r| r.tau)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
    Ok(RegularizeOutcome {
        dynamical: reg.dynamical,
        a_s,
        a_t,
        phi_s,
        psi_t,
        results,
        selected,
    })
}

/// Allowed ratio of `K_upper(Psi_t)` to the `psi_t` baseline.
pub const ONE_SIDED_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedBox {
    pub support_index: usize,
    pub psi_t: RefinementReport,
    pub big_psi_t: RefinementReport,
}

/// One-sided regularity of the unregularized `psi_t` against `Psi_t` near
/// `A_t`. Diagnostic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedReport {
    pub tau: f64,
    pub boxes: Vec<OneSidedBox>,
    /// Fine-grid `K_lower` of `psi_t`, `+inf` if it grew under halving.
    pub psi_t_k_lower: f64,
    pub psi_t_lower_stable: bool,
    pub psi_t_k_upper: f64,
    pub big_psi_t_k_upper: f64,
    pub upper_ratio_ok: bool,
    pub pass: bool,
}

pub fn one_sided_diagnostics(reg: &Regularizer<'_>, tau: f64, a_t: &[SpacetimePoint], spec: BoxSpec) -> Result<OneSidedReport> {
    let cands = reg.candidates(tau);
    let base = reg.base.clone();
    let mut boxes = Vec::with_capacity(a_t.len());
    for (k, x) in a_t.iter().enumerate() {
        let grid = RegularGrid::covering(x, spec.radius, spec.spacing);
        let psi_t = refinement_scan(
            |pts| Ok(evolve_psi(reg.g, &reg.psi, reg.t, pts, &base)?.values().to_vec()),
            &grid,
        )?;
        let big_psi_t = refinement_scan(|pts| reg.psi_values(tau, &cands, pts), &grid)?;
        boxes.push(OneSidedBox {
            support_index: k,
            psi_t,
            big_psi_t,
        });
    }
    let fold = |f: &dyn Fn(&OneSidedBox) -> f64| boxes.iter().map(f).fold(0.0, f64::max);
    let psi_t_k_lower = fold(&|b| b.psi_t.k_lower);
    let psi_t_k_upper = fold(&|b| b.psi_t.k_upper);
    let big_psi_t_k_upper = fold(&|b| b.big_psi_t.k_upper);
    let psi_t_lower_stable = boxes.iter().all(|b| !b.psi_t.divergent_lower);
    let upper_ratio_ok = big_psi_t_k_upper <= ONE_SIDED_RATIO * psi_t_k_upper;
    Ok(OneSidedReport {
        tau,
        boxes,
        psi_t_k_lower,
        psi_t_lower_stable,
        psi_t_k_upper,
        big_psi_t_k_upper,
        upper_ratio_ok,
        pass: psi_t_k_lower.is_finite() && psi_t_lower_stable && upper_ratio_ok,
    })
}
