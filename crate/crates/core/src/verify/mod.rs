//! Numerical certificates: duality and calibration, the cost super-differential,
//! semigroup laws, Legendre/Hamiltonian consistency and second-order regularity.
//!
//! Every check is a pure function of its inputs.

mod regularity;

pub use regularity::{
    c11_check, gradient_lipschitz, refinement_drift, refinement_scan, scan_directions, scan_values,
    semiconcavity_scan, BoxReport, BoxSpec, C11Report, C11Thresholds, DirectionWorst, RefinementReport,
    RegularGrid, SemiconcavityReport, DIVERGENCE_DRIFT,
};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{
    cost, cost_superdifferential, hamiltonian, lagrangian, legendre, legendre_inverse, ExtendedCost,
};
use crate::semigroup::{backward_lax_oleinik, forward_lax_oleinik, CandidateSet, PotentialField};
use crate::spacetime::{Covector, Geometry, SpacetimePoint, TangentVector};
use crate::transport::{
    displacement_interpolation, solve_kantorovich_with_time, Coupling, DualPair, DynamicalCoupling,
};

/// Tolerance on support residuals and subsolution violations.
pub const CALIBRATION_TOL: f64 = 1e-9;
/// Relative tolerance on the duality gap, scaled by `1 + |primal|`.
pub const GAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub primal: f64,
    pub dual: f64,
    /// `primal - dual`.
    pub duality_gap: f64,
    /// `max |psi_j - phi_i - c_ij|` over plan entries.
    pub max_support_residual: f64,
    /// `max (psi_j - phi_i - c_ij)^+` over all causal pairs.
    pub max_subsolution_violation: f64,
    pub gap_pass: bool,
    pub support_pass: bool,
    pub subsolution_pass: bool,
}

impl CalibrationReport {
    pub fn pass(&self) -> bool {
        self.gap_pass && self.support_pass && self.subsolution_pass
    }
}

pub fn check_duality(g: &dyn Geometry, pi: &Coupling, duals: &DualPair) -> Result<CalibrationReport> {
    let (mu0, mu1) = (&pi.source, &pi.target);
    if duals.phi.len() != mu0.len() || duals.psi.len() != mu1.len() {
        return Err(Error::InvalidInput("dual sizes do not match the measures".into()));
    }
    let mut primal = 0.0;
    let mut residual = 0.0f64;
    for e in &pi.entries {
        let c = cost(g, 1.0, &mu0.points()[e.source], &mu1.points()[e.target])?
            .finite()
            .ok_or(Error::NotCausallyRelated)?;
        primal += e.mass * c;
        residual = residual.max((duals.psi[e.target] - duals.phi[e.source] - c).abs());
    }
    let mut violation = 0.0f64;
    for (i, x) in mu0.points().iter().enumerate() {
        for (j, y) in mu1.points().iter().enumerate() {
            if let ExtendedCost::Finite(c) = cost(g, 1.0, x, y)? {
                violation = violation.max(duals.psi[j] - duals.phi[i] - c);
            }
        }
    }
    let dual = duals.value(mu0, mu1);
    let gap = primal - dual;
    Ok(CalibrationReport {
        primal,
        dual,
        duality_gap: gap,
        max_support_residual: residual,
        max_subsolution_violation: violation,
        gap_pass: gap.abs() <= GAP_TOL * (1.0 + primal.abs()),
        support_pass: residual <= CALIBRATION_TOL,
        subsolution_pass: violation <= CALIBRATION_TOL,
    })
}

/// Finite-difference steps for [`cost_gradient_check`].
pub const FD_STEPS: [f64; 2] = [1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostGradientReport {
    /// Per triple, the best relative error over the step schedule.
    pub errors: Vec<f64>,
    /// Worst relative error at each step of [`FD_STEPS`].
    pub max_error_per_step: Vec<f64>,
    pub max_rel_error: f64,
    /// Worst `|d_t c - (-c_1 / t^2)| / max(1, |d_t c|)`.
    pub dt_identity_error: f64,
    pub pass: bool,
    pub dt_pass: bool,
}

pub const COST_GRADIENT_TOL: f64 = 1e-5;
pub const DT_IDENTITY_TOL: f64 = 1e-12;

fn rel_err(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / exact.abs().max(1.0)
}

/// Compare the analytic super-differential of `C(t, x, y) = c_t(x, y)` with
/// central differences in every coordinate of `(t, x, y)`.
pub fn cost_gradient_check(g: &dyn Geometry, triples: &[(f64, SpacetimePoint, SpacetimePoint)]) -> Result<CostGradientReport> {
    let mut errors = Vec::with_capacity(triples.len());
    let mut per_step = vec![0.0f64; FD_STEPS.len()];
    let mut dt_err = 0.0f64;
    for (t, x, y) in triples {
        let sd = cost_superdifferential(g, *t, x, y)?;
        let c1 = cost(g, 1.0, x, y)?.finite().ok_or(Error::NotCausallyRelated)?;
        dt_err = dt_err.max(rel_err(sd.dt, -c1 / (t * t)));
        let f = |tt: f64, xx: &DVector<f64>, yy: &DVector<f64>| -> Result<f64> {
            cost(g, tt, &SpacetimePoint(xx.clone()), &SpacetimePoint(yy.clone()))?
                .finite()
                .ok_or(Error::NotCausallyRelated)
        };
        let mut best = f64::INFINITY;
        for (si, &h) in FD_STEPS.iter().enumerate() {
            let mut worst = rel_err((f(t + h, &x.0, &y.0)? - f(t - h, &x.0, &y.0)?) / (2.0 * h), sd.dt);
            for k in 0..x.dim() {
                let mut xp = x.0.clone();
                let mut xm = x.0.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (f(*t, &xp, &y.0)? - f(*t, &xm, &y.0)?) / (2.0 * h);
                worst = worst.max(rel_err(fd, sd.dx.components[k]));
                let mut yp = y.0.clone();
                let mut ym = y.0.clone();
                yp[k] += h;
                ym[k] -= h;
                let fd = (f(*t, &x.0, &yp)? - f(*t, &x.0, &ym)?) / (2.0 * h);
                worst = worst.max(rel_err(fd, sd.dy.components[k]));
            }
            per_step[si] = per_step[si].max(worst);
            best = best.min(worst);
        }
        errors.push(best);
    }
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(CostGradientReport {
        errors,
        max_error_per_step: per_step,
        max_rel_error,
        dt_identity_error: dt_err,
        pass: max_rel_error <= COST_GRADIENT_TOL,
        dt_pass: dt_err <= DT_IDENTITY_TOL,
    })
}

/// Random potentials for [`semigroup_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomFieldSpec {
    pub count: usize,
    pub seed: u64,
    /// Values are drawn uniformly from `[-amplitude, amplitude]`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub fields: usize,
    /// `min (T_t T_s u - T_{t+s} u)` on the fixed candidates; should be `>= 0`.
    pub sub_law_min_defect: f64,
    /// `max |T_t T_s u - T_{t+s} u|` once midpoints are added.
    pub enriched_defect: f64,
    /// `max (T̂_t T_t u - u)`; should be `<= 0`.
    pub contraction_violation: f64,
    /// `max (u - T_t T̂_t u)`; should be `<= 0`.
    pub dual_contraction_violation: f64,
    /// Rounding allowance for the two contraction inequalities.
    pub contraction_allowance: f64,
    /// `max (T u - T v)^+` and the backward analogue for `u <= v`.
    pub monotonicity_violation: f64,
    /// `max |T(u + a) - (T u + a)|` over both operators.
    pub shift_defect: f64,
    pub pass: bool,
}

pub const ASSOCIATIVITY_TOL: f64 = 1e-9;
pub const SHIFT_TOL: f64 = 1e-12;

fn finite_pairs<'a>(a: &'a [f64], b: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y))
}

/// Semigroup sub-law, contraction pair, monotonicity and shift equivariance
/// on random fields sampled at the candidate points, for times `s` and `t`.
pub fn semigroup_suite(
    g: &dyn Geometry,
    candidates: &CandidateSet,
    spec: RandomFieldSpec,
    s: f64,
    t: f64,
) -> Result<SemigroupReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pts = candidates.points().to_vec();
    let mut rep = SemigroupReport {
        fields: spec.count,
        sub_law_min_defect: f64::INFINITY,
        enriched_defect: 0.0,
        contraction_violation: f64::NEG_INFINITY,
        dual_contraction_violation: f64::NEG_INFINITY,
        contraction_allowance: 0.0,
        monotonicity_violation: 0.0,
        shift_defect: 0.0,
        pass: false,
    };
    let mut contraction_ok = true;
    for k in 0..spec.count {
        let vals: Vec<f64> = pts.iter().map(|_| rng.gen_range(-spec.amplitude..=spec.amplitude)).collect();
        let u = PotentialField::raw(pts.clone(), vals.clone(), &format!("random{k}"))?;

        // Sub-law on the fixed candidates.
        let ts = forward_lax_oleinik(g, &u, s, &pts, candidates)?;
        let tts = forward_lax_oleinik(g, &ts, t, &pts, candidates)?;
        let tst = forward_lax_oleinik(g, &u, s + t, &pts, candidates)?;
        for (a, b) in finite_pairs(tts.values(), tst.values()) {
            rep.sub_law_min_defect = rep.sub_law_min_defect.min(a - b);
        }

        // Same with the point at time s on the segment to every target.
        let mut extra = Vec::new();
        for (x, &arg) in pts.iter().zip(tst.argmin()) {
            if let Some(j) = arg {
                extra.push(pts[j].lerp(x, s / (s + t)));
            }
        }
        let enriched = candidates.union(extra);
        let ts_e = forward_lax_oleinik(g, &u, s, enriched.points(), &enriched)?;
        let tts_e = forward_lax_oleinik(g, &ts_e, t, &pts, &enriched)?;
        for (a, b) in finite_pairs(tts_e.values(), tst.values()) {
            rep.enriched_defect = rep.enriched_defect.max((a - b).abs());
        }

        // Contraction pair at the sites, with a rounding allowance: the
        // witness z = x gives fl(fl(u + c) - c), which may differ from u by
        // a few ulps of |u| + |c|.
        let tt = forward_lax_oleinik(g, &u, t, &pts, candidates)?;
        let bt = backward_lax_oleinik(g, &tt, t, &pts, candidates)?;
        let bb = backward_lax_oleinik(g, &u, t, &pts, candidates)?;
        let fb = forward_lax_oleinik(g, &bb, t, &pts, candidates)?;
        let scale = tt
            .values()
            .iter()
            .chain(bb.values())
            .chain(&vals)
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let allowance = 4.0 * f64::EPSILON * (1.0 + 2.0 * scale);
        rep.contraction_allowance = rep.contraction_allowance.max(allowance);
        for (a, b) in finite_pairs(bt.values(), &vals) {
            rep.contraction_violation = rep.contraction_violation.max(a - b);
            contraction_ok &= a - b <= allowance;
        }
        for (a, b) in finite_pairs(&vals, fb.values()) {
            rep.dual_contraction_violation = rep.dual_contraction_violation.max(a - b);
            contraction_ok &= a - b <= allowance;
        }

        // Monotonicity against v = u + nonnegative noise.
        let bumped: Vec<f64> = vals.iter().map(|x| x + rng.gen_range(0.0..spec.amplitude)).collect();
        let v = PotentialField::raw(pts.clone(), bumped, "bumped")?;
        let tv = forward_lax_oleinik(g, &v, t, &pts, candidates)?;
        let bv = backward_lax_oleinik(g, &v, t, &pts, candidates)?;
        for (a, b) in tt.values().iter().zip(tv.values()).chain(bb.values().iter().zip(bv.values())) {
            if a > b {
                rep.monotonicity_violation = rep.monotonicity_violation.max(if b.is_finite() { a - b } else { f64::INFINITY });
            }
        }

        // Shift equivariance.
        let a = rng.gen_range(-spec.amplitude..=spec.amplitude);
        let us = u.shifted(a);
        let tus = forward_lax_oleinik(g, &us, t, &pts, candidates)?;
        let bus = backward_lax_oleinik(g, &us, t, &pts, candidates)?;
        for (x, y) in finite_pairs(tus.values(), tt.values()).chain(finite_pairs(bus.values(), bb.values())) {
            rep.shift_defect = rep.shift_defect.max((x - (y + a)).abs());
        }
    }
    rep.pass = rep.sub_law_min_defect >= -SHIFT_TOL
        && rep.enriched_defect <= ASSOCIATIVITY_TOL
        && contraction_ok
        && rep.monotonicity_violation == 0.0
        && rep.shift_defect <= SHIFT_TOL;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianReport {
    pub samples: usize,
    /// `max |L^{-1}(L(v)) - v| / |v|`.
    pub max_roundtrip_error: f64,
    /// Count of `(p, v)` pairs with `p v > H(p) + L(v)` beyond rounding.
    pub young_violations: usize,
    /// `max |H(p(s)) - H(p(0))|` along flow orbits.
    pub max_energy_drift: f64,
    pub orbits: usize,
}

fn random_timelike(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let z: Vec<f64> = (1..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dt = dz + rng.gen_range(0.01..2.0);
        let mut v = vec![dt];
        v.extend(z);
        let v = DVector::from_vec(v);
        if v.norm() > 1e-3 {
            return v;
        }
    }
}

/// Legendre round-trips, the Young inequality `p v <= H(p) + L(v)` and the
/// energy along flow orbits.
pub fn hamiltonian_check(
    g: &dyn Geometry,
    samples: usize,
    orbits: usize,
    orbit_steps: usize,
    seed: u64,
) -> Result<HamiltonianReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = g.dim();
    let origin = SpacetimePoint(DVector::zeros(d));
    let mut roundtrip = 0.0f64;
    let mut young = 0usize;
    for _ in 0..samples {
        let v = TangentVector::new(origin.clone(), random_timelike(&mut rng, d));
        let p = legendre(g, &v)?;
        let back = legendre_inverse(g, &p)?;
        roundtrip = roundtrip.max((&back.components - &v.components).norm() / v.components.norm());
        // Young against an independent velocity.
        let w = TangentVector::new(origin.clone(), random_timelike(&mut rng, d));
        let h = hamiltonian(g, &p)?;
        let lw = lagrangian(g, &w)?.to_f64();
        let pw = p.pair(&w);
        if pw > h + lw + 1e-12 * (1.0 + pw.abs() + h.abs() + lw.abs()) {
            young += 1;
        }
    }
    let mut drift = 0.0f64;
    for _ in 0..orbits {
        let mut x = SpacetimePoint(DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)));
        let mut v = TangentVector::new(x.clone(), random_timelike(&mut rng, d));
        let h0 = hamiltonian(g, &legendre(g, &v)?)?;
        for _ in 0..orbit_steps {
            let (y, w) = g.flow_step(&x, &v, 0.01)?;
            x = y;
            v = w;
            let p = legendre(g, &v)?;
            let h = hamiltonian(g, &Covector::new(x.clone(), p.components))?;
            drift = drift.max((h - h0).abs());
        }
    }
    Ok(HamiltonianReport {
        samples,
        max_roundtrip_error: roundtrip,
        young_violations: young,
        max_energy_drift: drift,
        orbits,
    })
}

/// Tolerance for [`interpolation_check`].
pub const INTERPOLATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub s: f64,
    pub t: f64,
    /// `(t - s) C(mu_0, mu_1)`.
    pub expected: f64,
    /// `C^{t-s}(mu_s, mu_t)` from a fresh solve.
    pub resolved: f64,
    pub error: f64,
    pub pass: bool,
}

/// Re-solves between `mu_s` and `mu_t` with cost `c_{t-s}` and compares with
/// `(t - s)` times the original optimum `total`.
pub fn interpolation_check(g: &dyn Geometry, pi: &DynamicalCoupling, total: f64, s: f64, t: f64) -> Result<InterpolationReport> {
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::InvalidInput(format!("need 0 <= s < t <= 1, got s = {s}, t = {t}")));
    }
    let mu_s = displacement_interpolation(pi, s)?;
    let mu_t = displacement_interpolation(pi, t)?;
    let resolved = solve_kantorovich_with_time(g, &mu_s, &mu_t, t - s)?.primal_cost;
    let expected = (t - s) * total;
    let error = (resolved - expected).abs();
    Ok(InterpolationReport {
        s,
        t,
        expected,
        resolved,
        error,
        pass: error <= INTERPOLATION_TOL,
    })
}
