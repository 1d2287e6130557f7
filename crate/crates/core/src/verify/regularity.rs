//! Second-difference scans for semiconcavity, semiconvexity and `C^{1,1}`.
//!
//! On a regular grid with spacing `h`, a `K`-semiconcave function obeys
//! `u(x + e) - 2 u(x) + u(x - e) <= 2 K |e|^2` for every offset `e`. The scan
//! takes the smallest such `K` over axis and diagonal offsets, and the mirror
//! bound from below for semiconvexity. Grid halving separates bounded
//! constants from kinks, whose ratio grows like `1/h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::{lattice, PotentialField};
use crate::spacetime::SpacetimePoint;

/// Square grid `center + h (k_1, ..., k_d)`, `-steps <= k_i <= steps`, last
/// coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid {
    pub center: Vec<f64>,
    pub spacing: f64,
    pub steps: usize,
}

impl RegularGrid {
    pub fn new(center: &SpacetimePoint, spacing: f64, steps: usize) -> Self {
        Self {
            center: center.coords().to_vec(),
            spacing,
            steps,
        }
    }

    /// Grid covering the `h`-box of the given radius, `round(radius / spacing)` steps.
    pub fn covering(center: &SpacetimePoint, radius: f64, spacing: f64) -> Self {
        Self::new(center, spacing, (radius / spacing).round().max(1.0) as usize)
    }

    /// Same box at half the spacing.
    pub fn halved(&self) -> Self {
        Self {
            center: self.center.clone(),
            spacing: self.spacing / 2.0,
            steps: 2 * self.steps,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn side(&self) -> usize {
        2 * self.steps + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<SpacetimePoint> {
        // Offsets are formed as k * h so both halves of the grid are symmetric.
        let m = self.steps as i64;
        let offsets: Vec<f64> = (-m..=m).map(|k| k as f64 * self.spacing).collect();
        lattice(&SpacetimePoint::from_slice(&self.center), &offsets)
    }

    fn multi_index(&self, mut flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut idx = vec![0i64; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = (flat % side) as i64;
            flat /= side;
        }
        idx
    }

    fn flat(&self, idx: &[i64]) -> Option<usize> {
        let side = self.side() as i64;
        let mut flat = 0usize;
        for &i in idx {
            if i < 0 || i >= side {
                return None;
            }
            flat = flat * side as usize + i as usize;
        }
        Some(flat)
    }
}

/// Offsets `e in {-1, 0, 1}^d \ {0}` up to sign: axes and all diagonals.
pub fn scan_directions(dim: usize) -> Vec<Vec<i64>> {
    let total = 3usize.pow(dim as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut e = vec![0i64; dim];
        for k in (0..dim).rev() {
            e[k] = (c % 3) as i64 - 1;
            c /= 3;
        }
        // Keep the representative whose first nonzero entry is positive.
        if let Some(&first) = e.iter().find(|&&v| v != 0) {
            if first > 0 {
                out.push(e);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionWorst {
    pub point: Vec<f64>,
    pub direction: Vec<i64>,
    /// `Δ²u / (2 |e|^2)` at that point and offset.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconcavityReport {
    pub k_upper: f64,
    pub k_lower: f64,
    pub worst_upper: Option<DirectionWorst>,
    pub worst_lower: Option<DirectionWorst>,
    /// Largest `K_upper` along each scan direction.
    pub per_direction_upper: Vec<f64>,
    pub per_direction_lower: Vec<f64>,
    pub spacing: f64,
    pub steps: usize,
    pub dim: usize,
}

/// Scan a field whose sites are exactly `grid.points()`.
pub fn semiconcavity_scan(field: &PotentialField, grid: &RegularGrid) -> Result<SemiconcavityReport> {
    if field.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "field has {} sites, grid has {}",
            field.len(),
            grid.len()
        )));
    }
    scan_values(field.values(), grid)
}

pub fn scan_values(values: &[f64], grid: &RegularGrid) -> Result<SemiconcavityReport> {
    if values.len() != grid.len() {
        return Err(Error::InvalidInput("value count does not match grid".into()));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteField { point: k });
    }
    let dirs = scan_directions(grid.dim());
    let h2 = grid.spacing * grid.spacing;
    let points = grid.points();
    let mut up = vec![0.0f64; dirs.len()];
    let mut lo = vec![0.0f64; dirs.len()];
    let mut worst_up: Option<DirectionWorst> = None;
    let mut worst_lo: Option<DirectionWorst> = None;
    for flat in 0..values.len() {
        let idx = grid.multi_index(flat);
        for (di, e) in dirs.iter().enumerate() {
            let plus: Vec<i64> = idx.iter().zip(e).map(|(i, d)| i + d).collect();
            let minus: Vec<i64> = idx.iter().zip(e).map(|(i, d)| i - d).collect();
            let (Some(p), Some(m)) = (grid.flat(&plus), grid.flat(&minus)) else { continue };
            let norm2 = e.iter().map(|v| (v * v) as f64).sum::<f64>() * h2;
            let ratio = (values[p] - 2.0 * values[flat] + values[m]) / (2.0 * norm2);
            if ratio > up[di] {
                up[di] = ratio;
                if worst_up.as_ref().is_none_or(|w| ratio > w.ratio) {
                    worst_up = Some(DirectionWorst {
                        point: points[flat].coords().to_vec(),
                        direction: e.clone(),
                        ratio,
                    });
                }
            }
            if -ratio > lo[di] {
                lo[di] = -ratio;
                if worst_lo.as_ref().is_none_or(|w| ratio < w.ratio) {
                    worst_lo = Some(DirectionWorst {
                        point: points[flat].coords().to_vec(),
                        direction: e.clone(),
                        ratio,
                    });
                }
            }
        }
    }
    Ok(SemiconcavityReport {
        k_upper: up.iter().copied().fold(0.0, f64::max),
        k_lower: lo.iter().copied().fold(0.0, f64::max),
        worst_upper: worst_up,
        worst_lower: worst_lo,
        per_direction_upper: up,
        per_direction_lower: lo,
        spacing: grid.spacing,
        steps: grid.steps,
        dim: grid.dim(),
    })
}

/// Sup of `|∇u(x) - ∇u(x')| / |x - x'|` over grid neighbours, with centred
/// difference gradients.
pub fn gradient_lipschitz(values: &[f64], grid: &RegularGrid) -> f64 {
    let d = grid.dim();
    let h = grid.spacing;
    let grads: Vec<Option<Vec<f64>>> = (0..values.len())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            let mut g = vec![0.0; d];
            for k in 0..d {
                let mut p = idx.clone();
                let mut m = idx.clone();
                p[k] += 1;
                m[k] -= 1;
                g[k] = (values[grid.flat(&p)?] - values[grid.flat(&m)?]) / (2.0 * h);
            }
            Some(g)
        })
        .collect();
    let dirs = scan_directions(d);
    let mut best = 0.0f64;
    for flat in 0..values.len() {
        let Some(g0) = &grads[flat] else { continue };
        let idx = grid.multi_index(flat);
        for e in &dirs {
            let q: Vec<i64> = idx.iter().zip(e).map(|(i, v)| i + v).collect();
            let Some(other) = grid.flat(&q) else { continue };
            let Some(g1) = &grads[other] else { continue };
            let dg = g0.iter().zip(g1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dx = h * (e.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
            best = best.max(dg / dx);
        }
    }
    best
}

/// Relative change of a constant under refinement, `|fine - coarse| / max(coarse, 1)`.
pub fn refinement_drift(coarse: f64, fine: f64) -> f64 {
    (fine - coarse).abs() / coarse.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: SemiconcavityReport,
    pub fine: SemiconcavityReport,
    pub drift_upper: f64,
    pub drift_lower: f64,
    /// `K_upper` grows under halving beyond the drift tolerance.
    pub divergent_upper: bool,
    pub divergent_lower: bool,
    /// Fine-grid constants, `+inf` where divergent.
    pub k_upper: f64,
    pub k_lower: f64,
}

/// Drift above which a growing constant is treated as divergent.
pub const DIVERGENCE_DRIFT: f64 = 0.1;

/// Scan at `grid` and at half its spacing.
pub fn refinement_scan<F>(eval: F, grid: &RegularGrid) -> Result<RefinementReport>
where
    F: Fn(&[SpacetimePoint]) -> Result<Vec<f64>>,
{
    let fine_grid = grid.halved();
    let coarse = scan_values(&eval(&grid.points())?, grid)?;
    let fine = scan_values(&eval(&fine_grid.points())?, &fine_grid)?;
    let drift_upper = refinement_drift(coarse.k_upper, fine.k_upper);
    let drift_lower = refinement_drift(coarse.k_lower, fine.k_lower);
    let divergent_upper = drift_upper > DIVERGENCE_DRIFT && fine.k_upper > coarse.k_upper;
    let divergent_lower = drift_lower > DIVERGENCE_DRIFT && fine.k_lower > coarse.k_lower;
    Ok(RefinementReport {
        k_upper: if divergent_upper { f64::INFINITY } else { fine.k_upper },
        k_lower: if divergent_lower { f64::INFINITY } else { fine.k_lower },
        coarse,
        fine,
        drift_upper,
        drift_lower,
        divergent_upper,
        divergent_lower,
    })
}

/// Evaluation boxes of radius `radius` sampled with spacing `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub radius: f64,
    pub spacing: f64,
}

impl Default for BoxSpec {
    fn default() -> Self {
        Self {
            radius: 0.2,
            spacing: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C11Thresholds {
    pub k_max: f64,
    pub grad_lipschitz_max: f64,
    pub drift_max: f64,
}

impl Default for C11Thresholds {
    fn default() -> Self {
        Self {
            k_max: 1e3,
            grad_lipschitz_max: 1e3,
            drift_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxReport {
    pub support_index: usize,
    pub center: Vec<f64>,
    pub k_upper: f64,
    pub k_lower: f64,
    pub k_upper_fine: f64,
    pub k_lower_fine: f64,
    pub drift_upper: f64,
    pub drift_lower: f64,
    pub gradient_lipschitz: f64,
    pub gradient_lipschitz_fine: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C11Report {
    pub boxes: Vec<BoxReport>,
    pub k_upper: f64,
    pub k_lower: f64,
    pub gradient_lipschitz_estimate: f64,
    pub max_drift: f64,
    pub radius: f64,
    pub spacing: f64,
    pub thresholds: C11Thresholds,
    pub pass: bool,
}

/// Two-sided second-difference bounds and gradient variation on a box
/// around each support point, at the box spacing and at half of it. `eval`
/// returns the field values at the given points.
pub fn c11_check<F>(eval: F, support: &[SpacetimePoint], spec: BoxSpec, thr: C11Thresholds) -> Result<C11Report>
where
    F: Fn(&[SpacetimePoint]) -> Result<Vec<f64>> + Sync,
{
    let boxes: Vec<BoxReport> = support
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let grid = RegularGrid::covering(x, spec.radius, spec.spacing);
            let fine_grid = grid.halved();
            let vc = eval(&grid.points())?;
            let vf = eval(&fine_grid.points())?;
            let nonfinite = |v: &[f64]| v.iter().any(|a| !a.is_finite());
            if nonfinite(&vc) || nonfinite(&vf) {
                return Err(Error::NonFiniteField { point: k });
            }
            let coarse = scan_values(&vc, &grid)?;
            let fine = scan_values(&vf, &fine_grid)?;
            let glc = gradient_lipschitz(&vc, &grid);
            let glf = gradient_lipschitz(&vf, &fine_grid);
            let drift_upper = refinement_drift(coarse.k_upper, fine.k_upper);
            let drift_lower = refinement_drift(coarse.k_lower, fine.k_lower);
            let pass = [coarse.k_upper, coarse.k_lower, fine.k_upper, fine.k_lower]
                .iter()
                .all(|&v| v < thr.k_max)
                && glc < thr.grad_lipschitz_max
                && glf < thr.grad_lipschitz_max
                && drift_upper < thr.drift_max
                && drift_lower < thr.drift_max;
            Ok(BoxReport {
                support_index: k,
                center: x.coords().to_vec(),
                k_upper: coarse.k_upper,
                k_lower: coarse.k_lower,
                k_upper_fine: fine.k_upper,
                k_lower_fine: fine.k_lower,
                drift_upper,
                drift_lower,
                gradient_lipschitz: glc,
                gradient_lipschitz_fine: glf,
                pass,
            })
        })
        .collect::<Result<_>>()?;
    let fold = |f: fn(&BoxReport) -> f64| boxes.iter().map(f).fold(0.0, f64::max);
    Ok(C11Report {
        k_upper: fold(|b| b.k_upper.max(b.k_upper_fine)),
        k_lower: fold(|b| b.k_lower.max(b.k_lower_fine)),
        gradient_lipschitz_estimate: fold(|b| b.gradient_lipschitz.max(b.gradient_lipschitz_fine)),
        max_drift: fold(|b| b.drift_upper.max(b.drift_lower)),
        pass: boxes.iter().all(|b| b.pass),
        boxes,
        radius: spec.radius,
        spacing: spec.spacing,
        thresholds: thr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[f64]) -> SpacetimePoint {
        SpacetimePoint::from_slice(c)
    }

    fn eval_fn(f: impl Fn(&[f64]) -> f64) -> impl Fn(&[SpacetimePoint]) -> Result<Vec<f64>> {
        move |pts| Ok(pts.iter().map(|x| f(x.coords())).collect())
    }

    #[test]
    fn direction_counts() {
        assert_eq!(scan_directions(1).len(), 1);
        assert_eq!(scan_directions(2).len(), 4);
        assert_eq!(scan_directions(3).len(), 13);
    }

    #[test]
    fn quadratic_is_one_semiconcave_and_convex() {
        let grid = RegularGrid::new(&p(&[0.3, -0.2]), 0.05, 6);
        let vals = eval_fn(|x| x[0] * x[0] + x[1] * x[1])(&grid.points()).unwrap();
        let r = scan_values(&vals, &grid).unwrap();
        assert!((r.k_upper - 1.0).abs() < 1e-10, "{}", r.k_upper);
        // A convex function needs no quadratic correction from below.
        assert_eq!(r.k_lower, 0.0);
    }

    #[test]
    fn kink_diverges_under_refinement() {
        let grid = RegularGrid::new(&p(&[0.0]), 0.02, 10);
        let r = refinement_scan(eval_fn(|x| x[0].abs()), &grid).unwrap();
        assert!((r.coarse.k_upper - 1.0 / 0.02).abs() < 1e-6);
        assert!(r.divergent_upper);
        assert_eq!(r.k_upper, f64::INFINITY);
        // Linear pieces leave only rounding in the second differences.
        assert!(r.k_lower < 1e-9);
        assert!(!r.divergent_lower);
    }

    #[test]
    fn constant_field_passes_with_zero_constants() {
        let rep = c11_check(
            eval_fn(|_| 2.5),
            &[p(&[0.0, 0.0]), p(&[1.0, 0.5])],
            BoxSpec::default(),
            C11Thresholds::default(),
        )
        .unwrap();
        assert!(rep.pass);
        assert_eq!(rep.k_upper, 0.0);
        assert_eq!(rep.k_lower, 0.0);
        assert_eq!(rep.gradient_lipschitz_estimate, 0.0);
    }

    #[test]
    fn nonfinite_field_is_rejected() {
        let err = c11_check(
            eval_fn(|x| if x[1] > 0.1 { f64::INFINITY } else { 0.0 }),
            &[p(&[0.0, 0.0])],
            BoxSpec::default(),
            C11Thresholds::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFiniteField { point: 0 });
    }

    #[test]
    fn kink_fails_the_c11_check() {
        let rep = c11_check(
            eval_fn(|x| 50.0 * x[1].abs()),
            &[p(&[0.0, 0.0])],
            BoxSpec::default(),
            C11Thresholds::default(),
        )
        .unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn gradient_lipschitz_of_a_quadratic() {
        let grid = RegularGrid::new(&p(&[0.0, 0.0]), 0.02, 10);
        let vals = eval_fn(|x| 3.0 * x[0] * x[0] + x[1] * x[1])(&grid.points()).unwrap();
        let l = gradient_lipschitz(&vals, &grid);
        // Hessian diag(6, 2): largest ratio is along the first axis.
        assert!((l - 6.0).abs() < 1e-8, "{l}");
    }
}
