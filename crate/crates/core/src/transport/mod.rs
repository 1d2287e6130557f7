//! Discrete optimal transport for the cost family `c_t`.
//!
//! [`solve_kantorovich`] solves the linear program restricted to causally
//! related pairs with an exact network simplex, so the primal plan and the
//! dual potentials come from the same basis and the duality gap is at the
//! level of floating-point rounding. The dynamical layer lifts a plan to
//! weighted minimizing curves and reads off intermediate measures.

mod network_simplex;

pub use network_simplex::{FlowSolution, NetworkSimplex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lagrangian::{cost, ExtendedCost};
use crate::spacetime::{CausalRelation, Geometry, MinimizerCurve, SpacetimePoint};

/// Points closer than this (in `h`) are treated as one atom.
pub const MERGE_TOL: f64 = 1e-12;
/// Allowed deviation of the total mass from one.
pub const MASS_TOL: f64 = 1e-12;
/// Entries below this mass are dropped from a plan.
const MASS_FLOOR: f64 = 1e-15;

/// A finitely supported probability measure `sum_i w_i delta_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<SpacetimePoint>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and merges coincident atoms (first occurrence keeps its slot).
    pub fn new(points: Vec<SpacetimePoint>, weights: Vec<f64>) -> Result<Self> {
        Self::with_merge_map(points, weights).map(|(m, _)| m)
    }

    /// Like [`DiscreteMeasure::new`], also returning the merged index of each input atom.
    pub fn with_merge_map(points: Vec<SpacetimePoint>, weights: Vec<f64>) -> Result<(Self, Vec<usize>)> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty measure".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            if !p.is_finite() {
                return Err(Error::InvalidInput("non-finite coordinate".into()));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("total mass {total} != 1")));
        }
        let mut merged_pts: Vec<SpacetimePoint> = Vec::new();
        let mut merged_w: Vec<f64> = Vec::new();
        let mut map = Vec::with_capacity(points.len());
        for (p, w) in points.into_iter().zip(weights) {
            match merged_pts.iter().position(|q| (&q.0 - &p.0).norm() <= MERGE_TOL) {
                Some(k) => {
                    merged_w[k] += w;
                    map.push(k);
                }
                None => {
                    map.push(merged_pts.len());
                    merged_pts.push(p);
                    merged_w.push(w);
                }
            }
        }
        Ok((
            Self {
                points: merged_pts,
                weights: merged_w,
            },
            map,
        ))
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Vec<SpacetimePoint>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: SpacetimePoint) -> Self {
        Self {
            points: vec![point],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[SpacetimePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A transport plan between two discrete measures, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub entries: Vec<CouplingEntry>,
}

impl Coupling {
    pub fn source_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.source.len()];
        for e in &self.entries {
            m[e.source] += e.mass;
        }
        m
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.target.len()];
        for e in &self.entries {
            m[e.target] += e.mass;
        }
        m
    }

    /// `sum pi_ij c_t(x_i, y_j)`; `+inf` if some entry is not causal.
    pub fn cost(&self, geom: &dyn Geometry, t: f64) -> Result<ExtendedCost> {
        let mut total = 0.0;
        for e in &self.entries {
            match cost(geom, t, &self.source.points[e.source], &self.target.points[e.target])? {
                ExtendedCost::Finite(c) => total += e.mass * c,
                ExtendedCost::Infinite => return Ok(ExtendedCost::Infinite),
            }
        }
        Ok(ExtendedCost::Finite(total))
    }

    /// Largest marginal violation against the stored measures.
    pub fn marginal_error(&self) -> f64 {
        let a = self
            .source_marginal()
            .iter()
            .zip(self.source.weights())
            .map(|(m, w)| (m - w).abs())
            .fold(0.0, f64::max);
        let b = self
            .target_marginal()
            .iter()
            .zip(self.target.weights())
            .map(|(m, w)| (m - w).abs())
            .fold(0.0, f64::max);
        a.max(b)
    }
}

/// Kantorovich potentials on the supports, `psi_j - phi_i <= c(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Source index pinned to `phi = 0` in each connected component of the
    /// causal bipartite graph.
    pub anchors: Vec<usize>,
}

impl DualPair {
    /// `sum psi_j nu_j - sum phi_i mu_i`.
    pub fn value(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
        let a: f64 = self.psi.iter().zip(mu1.weights()).map(|(p, w)| p * w).sum();
        let b: f64 = self.phi.iter().zip(mu0.weights()).map(|(p, w)| p * w).sum();
        a - b
    }
}

#[derive(Debug, Clone)]
pub struct KantorovichSolution {
    pub coupling: Coupling,
    pub duals: DualPair,
    pub primal_cost: f64,
    pub dual_value: f64,
    /// Cost parameter the problem was solved for.
    pub time: f64,
    pub pivots: usize,
}

impl KantorovichSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.primal_cost - self.dual_value).abs()
    }
}

/// Finite cost matrix entries `(i, j, c_t(x_i, y_j))` over causal pairs, row-major.
pub fn causal_cost_arcs(
    geom: &dyn Geometry,
    t: f64,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
) -> Result<Vec<(usize, usize, f64)>> {
    let rows: Result<Vec<Vec<(usize, usize, f64)>>> = (0..mu0.len())
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in 0..mu1.len() {
                if let ExtendedCost::Finite(c) = cost(geom, t, &mu0.points[i], &mu1.points[j])? {
                    row.push((i, j, c));
                }
            }
            Ok(row)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Optimal plan and potentials for the cost `c_1`.
pub fn solve_kantorovich(
    geom: &dyn Geometry,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
) -> Result<KantorovichSolution> {
    solve_kantorovich_with_time(geom, mu0, mu1, 1.0)
}

/// Optimal plan and potentials for the cost `c_t`.
pub fn solve_kantorovich_with_time(
    geom: &dyn Geometry,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    t: f64,
) -> Result<KantorovichSolution> {
    if mu0.dim() != geom.dim() || mu1.dim() != geom.dim() {
        return Err(Error::DimensionMismatch {
            expected: geom.dim(),
            found: if mu0.dim() != geom.dim() { mu0.dim() } else { mu1.dim() },
        });
    }
    let (m, k) = (mu0.len(), mu1.len());
    let arcs = causal_cost_arcs(geom, t, mu0, mu1)?;
    let mut supply: Vec<f64> = mu0.weights().to_vec();
    supply.extend(mu1.weights().iter().map(|w| -w));
    let net_arcs: Vec<(usize, usize, f64)> = arcs.iter().map(|&(i, j, c)| (i, m + j, c)).collect();
    let sol = NetworkSimplex::new(&supply, &net_arcs).solve(1e-9)?;

    let entries: Vec<CouplingEntry> = arcs
        .iter()
        .zip(&sol.flows)
        .filter(|(_, &f)| f > MASS_FLOOR)
        .map(|(&(i, j, _), &f)| CouplingEntry {
            source: i,
            target: j,
            mass: f,
        })
        .collect();
    let primal_cost = arcs
        .iter()
        .zip(&sol.flows)
        .filter(|(_, &f)| f > MASS_FLOOR)
        .map(|(&(_, _, c), &f)| c * f)
        .sum();

    let mut phi = sol.potentials[..m].to_vec();
    let mut psi = sol.potentials[m..m + k].to_vec();
    let anchors = normalize_components(&mut phi, &mut psi, &arcs);
    let duals = DualPair { phi, psi, anchors };
    let dual_value = duals.value(mu0, mu1);
    Ok(KantorovichSolution {
        coupling: Coupling {
            source: mu0.clone(),
            target: mu1.clone(),
            entries,
        },
        duals,
        primal_cost,
        dual_value,
        time: t,
        pivots: sol.pivots,
    })
}

/// Shift potentials so the lowest source index of every connected component
/// of the causal graph has `phi = 0`. Returns the anchors.
fn normalize_components(phi: &mut [f64], psi: &mut [f64], arcs: &[(usize, usize, f64)]) -> Vec<usize> {
    let m = phi.len();
    let n = m + psi.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut v: usize) -> usize {
        while p[v] != v {
            p[v] = p[p[v]];
            v = p[v];
        }
        v
    }
    for &(i, j, _) in arcs {
        let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    // Roots are the smallest node of each component, so a component containing
    // a source is rooted at its lowest source index.
    let mut anchors = Vec::new();
    let mut shift = vec![0.0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if r == v && v < m {
            anchors.push(v);
            shift[v] = phi[v];
        }
    }
    for (i, p) in phi.iter_mut().enumerate() {
        *p -= shift[find(&mut parent, i)];
    }
    for (j, p) in psi.iter_mut().enumerate() {
        *p -= shift[find(&mut parent, m + j)];
    }
    anchors
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChronologicalSupport {
    /// Mass fraction of the plan on chronologically related pairs.
    pub fraction: f64,
    pub pass: bool,
}

pub fn check_chronological_support(geom: &dyn Geometry, pi: &Coupling) -> Result<ChronologicalSupport> {
    let mut chrono = 0.0;
    let mut total = 0.0;
    for e in &pi.entries {
        total += e.mass;
        let rel = geom.causal_relation(&pi.source.points[e.source], &pi.target.points[e.target])?;
        if rel == CausalRelation::Chronological {
            chrono += e.mass;
        }
    }
    let fraction = if total > 0.0 { chrono / total } else { 0.0 };
    Ok(ChronologicalSupport {
        fraction,
        pass: fraction == 1.0,
    })
}

/// One weighted minimizing curve of a dynamical plan.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCurve {
    pub curve: MinimizerCurve,
    pub mass: f64,
    pub source: usize,
    pub target: usize,
}

/// A plan on curves: one minimizer `[0, 1] -> M` per coupling entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalCoupling {
    pub curves: Vec<WeightedCurve>,
}

pub fn dynamical_coupling(geom: &dyn Geometry, pi: &Coupling) -> Result<DynamicalCoupling> {
    let curves = pi
        .entries
        .iter()
        .map(|e| {
            let curve = geom.minimizer(&pi.source.points[e.source], &pi.target.points[e.target], 1.0)?;
            Ok(WeightedCurve {
                curve,
                mass: e.mass,
                source: e.source,
                target: e.target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DynamicalCoupling { curves })
}

/// `mu_t = (e_t)_# Pi` together with the atom of `mu_t` each curve lands on.
pub fn displacement_interpolation_indexed(
    pi: &DynamicalCoupling,
    t: f64,
) -> Result<(DiscreteMeasure, Vec<usize>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} outside [0, 1]")));
    }
    let pts: Vec<SpacetimePoint> = pi.curves.iter().map(|c| c.curve.position(t)).collect();
    let w: Vec<f64> = pi.curves.iter().map(|c| c.mass).collect();
    DiscreteMeasure::with_merge_map(pts, w)
}

pub fn displacement_interpolation(pi: &DynamicalCoupling, t: f64) -> Result<DiscreteMeasure> {
    displacement_interpolation_indexed(pi, t).map(|(m, _)| m)
}

/// `(e_s, e_t)_# Pi` as a coupling between `mu_s` and `mu_t`.
pub fn intermediate_coupling(pi: &DynamicalCoupling, s: f64, t: f64) -> Result<Coupling> {
    if !(s < t) {
        return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    let (mu_s, map_s) = displacement_interpolation_indexed(pi, s)?;
    let (mu_t, map_t) = displacement_interpolation_indexed(pi, t)?;
    let mut entries: Vec<CouplingEntry> = Vec::new();
    for (k, c) in pi.curves.iter().enumerate() {
        let (i, j) = (map_s[k], map_t[k]);
        match entries.iter_mut().find(|e| e.source == i && e.target == j) {
            Some(e) => e.mass += c.mass,
            None => entries.push(CouplingEntry {
                source: i,
                target: j,
                mass: c.mass,
            }),
        }
    }
    Ok(Coupling {
        source: mu_s,
        target: mu_t,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::Minkowski;

    fn p(c: &[f64]) -> SpacetimePoint {
        SpacetimePoint::from_slice(c)
    }

    #[test]
    fn dirac_to_dirac() {
        let g = Minkowski::new(1).unwrap();
        let mu0 = DiscreteMeasure::dirac(p(&[0.0, 0.0]));
        let mu1 = DiscreteMeasure::dirac(p(&[1.0, 0.0]));
        let sol = solve_kantorovich(&g, &mu0, &mu1).unwrap();
        assert_eq!(sol.coupling.entries.len(), 1);
        assert_eq!(sol.coupling.entries[0].mass, 1.0);
        assert!((sol.primal_cost - 1.0).abs() < 1e-15);
        assert_eq!(sol.duals.phi, vec![0.0]);
        assert!((sol.duals.psi[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_pair_costs_four() {
        let g = Minkowski::new(1).unwrap();
        let mu0 = DiscreteMeasure::dirac(p(&[0.0, 0.0]));
        let mu1 = DiscreteMeasure::dirac(p(&[1.0, 1.0]));
        let sol = solve_kantorovich(&g, &mu0, &mu1).unwrap();
        assert!((sol.primal_cost - 4.0).abs() < 1e-15);
        let chrono = check_chronological_support(&g, &sol.coupling).unwrap();
        assert_eq!(chrono.fraction, 0.0);
        assert!(!chrono.pass);
    }

    #[test]
    fn spacelike_supports_are_infeasible() {
        let g = Minkowski::new(1).unwrap();
        let mu0 = DiscreteMeasure::dirac(p(&[0.0, 0.0]));
        let mu1 = DiscreteMeasure::dirac(p(&[0.0, 1.0]));
        assert_eq!(solve_kantorovich(&g, &mu0, &mu1).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn merging_coincident_atoms() {
        let (m, map) = DiscreteMeasure::with_merge_map(
            vec![p(&[0.0, 0.0]), p(&[1.0, 0.0]), p(&[0.0, 1e-13])],
            vec![0.25, 0.5, 0.25],
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(map, vec![0, 1, 0]);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(vec![p(&[0.0, 0.0])], vec![0.9]).is_err());
        assert!(DiscreteMeasure::new(vec![p(&[0.0, 0.0]), p(&[1.0, 0.0])], vec![1.0, 0.0]).is_err());
        assert!(DiscreteMeasure::new(vec![p(&[0.0, 0.0]), p(&[1.0])], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn disconnected_components_are_anchored_separately() {
        let g = Minkowski::new(1).unwrap();
        // Two far apart clusters that cannot reach each other causally.
        let mu0 = DiscreteMeasure::uniform(vec![p(&[0.0, 0.0]), p(&[0.0, 100.0])]).unwrap();
        let mu1 = DiscreteMeasure::uniform(vec![p(&[1.0, 0.0]), p(&[1.0, 100.0])]).unwrap();
        let sol = solve_kantorovich(&g, &mu0, &mu1).unwrap();
        assert_eq!(sol.duals.anchors, vec![0, 1]);
        assert_eq!(sol.duals.phi, vec![0.0, 0.0]);
        assert!(sol.duality_gap() < 1e-14);
    }

    #[test]
    fn interpolation_endpoints_recover_marginals() {
        let g = Minkowski::new(1).unwrap();
        let mu0 = DiscreteMeasure::uniform(vec![p(&[0.0, 0.0]), p(&[0.0, 0.5])]).unwrap();
        let mu1 = DiscreteMeasure::uniform(vec![p(&[3.0, 0.2]), p(&[3.0, 0.4])]).unwrap();
        let sol = solve_kantorovich(&g, &mu0, &mu1).unwrap();
        let dyn_pi = dynamical_coupling(&g, &sol.coupling).unwrap();
        let m0 = displacement_interpolation(&dyn_pi, 0.0).unwrap();
        let m1 = displacement_interpolation(&dyn_pi, 1.0).unwrap();
        for (q, w) in m0.points().iter().zip(m0.weights()) {
            let k = mu0.points().iter().position(|x| x == q).unwrap();
            assert_eq!(*w, mu0.weights()[k]);
        }
        for (q, w) in m1.points().iter().zip(m1.weights()) {
            let k = mu1.points().iter().position(|x| x == q).unwrap();
            assert_eq!(*w, mu1.weights()[k]);
        }
        let mid = displacement_interpolation(&dyn_pi, 0.5).unwrap();
        assert!((mid.total_mass() - 1.0).abs() < 1e-15);
    }
}
