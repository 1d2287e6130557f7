//! Continuous outer extremum of the regularized potentials.
//!
//! For a finitely supported `phi`, `T_{a} phi(z) = min_i phi_i + c_a(x_i, z)`
//! exactly, so `T̂_b T_a phi(x) = sup_z min_i g_i(z)` with
//! `g_i(z) = phi_i + c_a(x_i, z) - c_b(x, z)`. The backward-forward chain for
//! `psi` has the same shape with the cost arguments swapped. Each `g_i` is
//! smooth on the open cone where it is finite, so the supremum is a maximin
//! of finitely many smooth functions.
//!
//! The solver grows an active set by constraint generation. For each active
//! subset it solves the KKT system `sum λ_k ∇g_k = 0`, `g_k = w`,
//! `sum λ_k = 1` by Newton's method, and keeps a point once every branch is
//! at least `w`. The returned value is always `min_i g_i` evaluated at an
//! explicit point, hence a lower bound for the supremum.

use nalgebra::{DMatrix, DVector};

use crate::lagrangian::ExtendedCost;
use crate::spacetime::{Geometry, SpacetimePoint};

const NEWTON_ITERS: usize = 60;
const MAX_STARTS: usize = 4;
const NM_ITERS: usize = 2000;

/// Which way the inner cost points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `g_i(z) = o_i + c_long(a_i, z) - c_short(x, z)`, `z` in the future of `x`.
    Future,
    /// `g_i(z) = o_i + c_long(z, a_i) - c_short(z, x)`, `z` in the past of `x`.
    Past,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub anchor: SpacetimePoint,
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub side: Side,
    pub branches: Vec<Branch>,
    pub long: f64,
    pub short: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: f64,
    pub point: SpacetimePoint,
}

type Jet = (f64, DVector<f64>, DMatrix<f64>);

struct Objective<'a> {
    g: &'a dyn Geometry,
    p: &'a Problem,
    x: &'a SpacetimePoint,
}

impl Objective<'_> {
    fn ordered<'b>(&self, z: &'b [f64], a: &'b [f64]) -> (&'b [f64], &'b [f64]) {
        match self.p.side {
            Side::Future => (a, z),
            Side::Past => (z, a),
        }
    }

    /// `g_i(z)`, `+inf` where branch `i` does not constrain, `-inf` where
    /// `z` is not causally related to the center.
    fn branch_value(&self, i: usize, z: &[f64]) -> f64 {
        let (u, v) = self.ordered(z, self.x.coords());
        let d = match self.g.cost_coords(self.p.short, u, v) {
            ExtendedCost::Finite(d) => d,
            ExtendedCost::Infinite => return f64::NEG_INFINITY,
        };
        let b = &self.p.branches[i];
        let (u, v) = self.ordered(z, b.anchor.coords());
        match self.g.cost_coords(self.p.long, u, v) {
            ExtendedCost::Finite(c) => b.offset + c - d,
            ExtendedCost::Infinite => f64::INFINITY,
        }
    }

    /// `min_i g_i(z)` with its lowest minimizing branch.
    fn value(&self, z: &[f64]) -> (f64, Option<usize>) {
        let mut best = f64::INFINITY;
        let mut arg = None;
        for i in 0..self.p.branches.len() {
            let v = self.branch_value(i, z);
            if v == f64::NEG_INFINITY {
                return (v, None);
            }
            if v < best {
                best = v;
                arg = Some(i);
            }
        }
        (best, arg)
    }

    fn jet(&self, t: f64, u: &[f64], v: &[f64]) -> Option<Jet> {
        let (pu, pv) = (SpacetimePoint::from_slice(u), SpacetimePoint::from_slice(v));
        let j = self.g.cost_jet(t, &pu, &pv)?;
        Some(match self.p.side {
            Side::Future => (j.value, j.grad_y, j.hess_yy),
            Side::Past => (j.value, j.grad_x, j.hess_xx),
        })
    }

    /// Value, gradient and Hessian of `g_i` in `z`.
    fn branch_jet(&self, i: usize, z: &[f64]) -> Option<Jet> {
        let (u, v) = self.ordered(z, self.x.coords());
        let (d, dg, dh) = self.jet(self.p.short, u, v)?;
        let b = &self.p.branches[i];
        let (u, v) = self.ordered(z, b.anchor.coords());
        let (c, cg, ch) = self.jet(self.p.long, u, v)?;
        Some((b.offset + c - d, cg - dg, ch - dh))
    }
}

/// Maximize `min_i g_i` near the center `x`. `warm` is an extra starting point.
pub fn solve(g: &dyn Geometry, p: &Problem, x: &SpacetimePoint, warm: Option<&SpacetimePoint>) -> Option<Solution> {
    if p.branches.is_empty() || !(p.long > p.short && p.short > 0.0) {
        return None;
    }
    let obj = Objective { g, p, x };
    let mut starts: Vec<DVector<f64>> = Vec::new();
    if let Some(w) = warm {
        starts.push(w.0.clone());
    }
    // The minimizer through x from each anchor, extended by the short time.
    let stretch = p.long / (p.long - p.short);
    for b in &p.branches {
        starts.push(&b.anchor.0 + (&x.0 - &b.anchor.0) * stretch);
    }
    let mut scored: Vec<(f64, DVector<f64>)> = starts
        .into_iter()
        .map(|z| (obj.value(z.as_slice()).0, z))
        .filter(|(v, _)| v.is_finite())
        .collect();
    // Stable: ties keep the warm start first.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.dedup_by(|a, b| a.1 == b.1);

    let mut best: Option<Solution> = None;
    for (_, z0) in scored.into_iter().take(MAX_STARTS) {
        let Some((v, z)) = local_solve(&obj, z0) else { continue };
        if best.as_ref().is_none_or(|b| v > b.value) {
            best = Some(Solution {
                value: v,
                point: SpacetimePoint(z),
            });
        }
    }
    best
}

fn local_solve(obj: &Objective, z0: DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let n = obj.p.branches.len();
    let (_, first) = obj.value(z0.as_slice());
    let mut active = vec![first?];
    let mut z = z0;
    for _ in 0..(n + 2) {
        let Some((z_new, w)) = restricted_maximin(obj, &active, &z) else {
            return nelder_mead(obj, z);
        };
        let tol = 1e-12 * (1.0 + w.abs());
        let (value, arg) = obj.value(z_new.as_slice());
        match arg {
            Some(i) if value < w - tol && !active.contains(&i) => {
                active.push(i);
                active.sort_unstable();
                z = z_new;
            }
            _ => return value.is_finite().then_some((value, z_new)),
        }
    }
    nelder_mead(obj, z)
}

/// KKT point of `max_z min_{k in active} g_k(z)` reachable from `z0`.
fn restricted_maximin(obj: &Objective, active: &[usize], z0: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let d = z0.len();
    let max_size = active.len().min(d + 1);
    for size in 1..=max_size {
        for subset in subsets(active, size) {
            let Some((z, lambda, w)) = kkt_newton(obj, &subset, z0) else { continue };
            if lambda.iter().any(|&l| l < -1e-10) {
                continue;
            }
            let tol = 1e-11 * (1.0 + w.abs());
            let feasible = active.iter().all(|&k| obj.branch_value(k, z.as_slice()) >= w - tol);
            if feasible && second_order_ok(obj, &subset, &lambda, &z) {
                return Some((z, w));
            }
        }
    }
    None
}

fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    let n = items.len();
    if size > n {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&k| items[k]).collect());
        let mut k = size;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if idx[k] != k + n - size {
                break;
            }
            if k == 0 {
                return out;
            }
        }
        idx[k] += 1;
        for m in k + 1..size {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

struct KktState {
    jets: Vec<Jet>,
    residual: DVector<f64>,
}

fn kkt_state(obj: &Objective, subset: &[usize], z: &DVector<f64>, lambda: &DVector<f64>, w: f64) -> Option<KktState> {
    let d = z.len();
    let m = subset.len();
    let jets: Vec<Jet> = subset
        .iter()
        .map(|&k| obj.branch_jet(k, z.as_slice()))
        .collect::<Option<_>>()?;
    let mut r = DVector::zeros(d + m + 1);
    for (l, (_, grad, _)) in lambda.iter().zip(&jets) {
        for a in 0..d {
            r[a] += l * grad[a];
        }
    }
    for (k, (val, _, _)) in jets.iter().enumerate() {
        r[d + k] = val - w;
    }
    r[d + m] = lambda.sum() - 1.0;
    Some(KktState { jets, residual: r })
}

fn kkt_newton(obj: &Objective, subset: &[usize], z0: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let d = z0.len();
    let m = subset.len();
    let mut z = z0.clone();
    let mut lambda = DVector::from_element(m, 1.0 / m as f64);
    let mut w = subset
        .iter()
        .map(|&k| obj.branch_value(k, z.as_slice()))
        .fold(f64::INFINITY, f64::min);
    if !w.is_finite() {
        return None;
    }
    let mut state = kkt_state(obj, subset, &z, &lambda, w)?;
    for _ in 0..NEWTON_ITERS {
        let norm = state.residual.norm();
        let scale = 1.0 + w.abs();
        if state.residual.amax() <= 1e-13 * scale {
            return Some((z, lambda, w));
        }
        let n = d + m + 1;
        let mut jac = DMatrix::zeros(n, n);
        for (l, (_, _, hess)) in lambda.iter().zip(&state.jets) {
            for a in 0..d {
                for b in 0..d {
                    jac[(a, b)] += l * hess[(a, b)];
                }
            }
        }
        for (k, (_, grad, _)) in state.jets.iter().enumerate() {
            for a in 0..d {
                jac[(a, d + k)] = grad[a];
                jac[(d + k, a)] = grad[a];
            }
            jac[(d + k, d + m)] = -1.0;
            jac[(d + m, d + k)] = 1.0;
        }
        let step = jac.lu().solve(&(-&state.residual))?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let zn = &z + step.rows(0, d) * alpha;
            let ln = &lambda + step.rows(d, m) * alpha;
            let wn = w + step[d + m] * alpha;
            if let Some(sn) = kkt_state(obj, subset, &zn, &ln, wn) {
                if sn.residual.norm() < (1.0 - 1e-4 * alpha) * norm {
                    accepted = Some((zn, ln, wn, sn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zn, ln, wn, sn)) => {
                z = zn;
                lambda = ln;
                w = wn;
                state = sn;
            }
            // Stalled at rounding level.
            None if state.residual.amax() <= 1e-10 * scale => return Some((z, lambda, w)),
            None => return None,
        }
    }
    (state.residual.amax() <= 1e-10 * (1.0 + w.abs())).then_some((z, lambda, w))
}

/// `sum λ_k H_k` negative definite on the directions that keep the active
/// branches equal to first order.
fn second_order_ok(obj: &Objective, subset: &[usize], lambda: &DVector<f64>, z: &DVector<f64>) -> bool {
    let d = z.len();
    let Some(jets) = subset
        .iter()
        .map(|&k| obj.branch_jet(k, z.as_slice()))
        .collect::<Option<Vec<Jet>>>()
    else {
        return false;
    };
    let mut a = DMatrix::zeros(d, d);
    for (l, (_, _, h)) in lambda.iter().zip(&jets) {
        a -= h * *l;
    }
    let m = jets.len();
    let proj = if m > 1 {
        let mut b = DMatrix::zeros(m - 1, d);
        for k in 1..m {
            for c in 0..d {
                b[(k - 1, c)] = jets[k].1[c] - jets[0].1[c];
            }
        }
        let Some(inv) = (&b * b.transpose()).try_inverse() else {
            return false;
        };
        DMatrix::identity(d, d) - b.transpose() * inv * &b
    } else {
        DMatrix::identity(d, d)
    };
    let complement = DMatrix::identity(d, d) - &proj;
    let mut reduced = &proj * a * &proj + complement;
    reduced = (&reduced + reduced.transpose()) * 0.5;
    reduced.cholesky().is_some()
}

/// Derivative-free fallback; returns the best point it evaluated.
fn nelder_mead(obj: &Objective, z0: DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let d = z0.len();
    let f = |z: &DVector<f64>| obj.value(z.as_slice()).0;
    let step = 1e-3 * (1.0 + z0.amax());
    let mut simplex: Vec<(f64, DVector<f64>)> = vec![(f(&z0), z0.clone())];
    for k in 0..d {
        let mut z = z0.clone();
        z[k] += step;
        simplex.push((f(&z), z));
    }
    for _ in 0..NM_ITERS {
        simplex.sort_by(|a, b| b.0.total_cmp(&a.0));
        let spread = simplex[0].0 - simplex[d].0;
        if spread.is_finite() && spread.abs() <= 1e-15 * (1.0 + simplex[0].0.abs()) {
            break;
        }
        let centroid = simplex[..d].iter().fold(DVector::zeros(d), |acc, (_, z)| acc + z) / d as f64;
        let worst = simplex[d].clone();
        let reflect = &centroid + (&centroid - &worst.1);
        let fr = f(&reflect);
        if fr > simplex[0].0 {
            let expand = &centroid + (&centroid - &worst.1) * 2.0;
            let fe = f(&expand);
            simplex[d] = if fe > fr { (fe, expand) } else { (fr, reflect) };
        } else if fr > simplex[d - 1].0 {
            simplex[d] = (fr, reflect);
        } else {
            let contract = &centroid + (&worst.1 - &centroid) * 0.5;
            let fc = f(&contract);
            if fc > worst.0 {
                simplex[d] = (fc, contract);
            } else {
                let best = simplex[0].1.clone();
                for item in simplex.iter_mut().skip(1) {
                    let z = &best + (&item.1 - &best) * 0.5;
                    *item = (f(&z), z);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (v, z) = simplex.swap_remove(0);
    v.is_finite().then_some((v, z))
}
