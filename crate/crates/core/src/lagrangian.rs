//! The Lorentzian Lagrangian `L(x, v) = (d tau(v) - |v|_g)^2`, its cost family
//! `c_t`, the Legendre transform and the Hamiltonian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::{in_future_cone, Covector, Geometry, MinimizerCurve, SpacetimePoint, TangentVector};

/// A cost or Lagrangian value in `[0, +inf]`. Infinity is the value taken
/// exactly off the causal cone and is kept as its own variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtendedCost {
    Finite(f64),
    Infinite,
}

impl ExtendedCost {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedCost::Finite(c) => Some(c),
            ExtendedCost::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedCost::Finite(_))
    }

    /// IEEE view, for reporting only.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

/// Value, fiber gradient and fiber Hessian of `L` at a timelike `v`, given
/// the metric matrix and `d tau` at the base point.
pub(crate) fn jet_from_metric(
    metric: &DMatrix<f64>,
    dtau: &DVector<f64>,
    v: &DVector<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let gv = metric * v;
    let norm = (-v.dot(&gv)).max(0.0).sqrt();
    let f = dtau.dot(v) - norm;
    // grad |v|_g = -G v / |v|_g
    let grad_norm = -&gv / norm;
    let grad_f = dtau - &grad_norm;
    // hess |v|_g = -G/|v|_g - (G v)(G v)^T / |v|_g^3
    let hess_norm = -metric / norm - (&gv * gv.transpose()) / (norm * norm * norm);
    let hess = (&grad_f * grad_f.transpose()) * 2.0 - hess_norm * (2.0 * f);
    (f * f, grad_f * (2.0 * f), hess)
}

/// Jet of the flat-space Lagrangian (`tau = 2t`) at a timelike chart vector.
pub(crate) fn minkowski_jet(v: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = v.len();
    let mut metric = DMatrix::identity(n, n);
    metric[(0, 0)] = -1.0;
    let mut dtau = DVector::zeros(n);
    dtau[0] = 2.0;
    jet_from_metric(&metric, &dtau, v)
}

fn g_norm(geom: &dyn Geometry, v: &TangentVector) -> f64 {
    let m = geom.metric(&v.base);
    (v.components.dot(&(&m * &v.components))).abs().sqrt()
}

/// `L(x, v)`; `+inf` off the causal cone.
pub fn lagrangian(geom: &dyn Geometry, v: &TangentVector) -> Result<ExtendedCost> {
    if !geom.is_causal_vector(v)? {
        return Ok(ExtendedCost::Infinite);
    }
    let f = geom.dtau(&v.base).dot(&v.components) - g_norm(geom, v);
    Ok(ExtendedCost::Finite(f * f))
}

/// `c_t(x, y) = (tau(y) - tau(x) - d(x, y))^2 / t` on `J^+`, `+inf` elsewhere.
pub fn cost(geom: &dyn Geometry, t: f64, x: &SpacetimePoint, y: &SpacetimePoint) -> Result<ExtendedCost> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    if !geom.causal_relation(x, y)?.is_causal() {
        return Ok(ExtendedCost::Infinite);
    }
    let gap = geom.tau(y) - geom.tau(x) - geom.lorentz_distance(x, y)?;
    Ok(ExtendedCost::Finite(gap * gap / t))
}

/// Flat-space cost on raw coordinate slices. Hot loops in the semigroup
/// layer use this to avoid allocating.
pub(crate) fn minkowski_cost(t: f64, x: &[f64], y: &[f64]) -> ExtendedCost {
    let dt = y[0] - x[0];
    let mut dz2 = 0.0;
    for k in 1..x.len() {
        let d = y[k] - x[k];
        dz2 += d * d;
    }
    let dz = dz2.sqrt();
    if dt < dz - crate::spacetime::CONE_TOL * (1.0 + dt.abs()) {
        return ExtendedCost::Infinite;
    }
    let d = ((dt - dz) * (dt + dz)).max(0.0).sqrt();
    let gap = 2.0 * dt - d;
    ExtendedCost::Finite(gap * gap / t)
}

/// Midpoint-rule action `int_0^T L(gamma, gamma')`.
pub fn action(geom: &dyn Geometry, curve: &MinimizerCurve, n_samples: usize) -> Result<f64> {
    let n = n_samples.max(1);
    let ds = curve.duration / n as f64;
    let mut total = 0.0;
    for k in 0..n {
        let s = (k as f64 + 0.5) * ds;
        match lagrangian(geom, &curve.velocity(s))? {
            ExtendedCost::Finite(l) => total += l * ds,
            ExtendedCost::Infinite => return Ok(f64::INFINITY),
        }
    }
    Ok(total)
}

fn timelike_jet(geom: &dyn Geometry, v: &TangentVector) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    if !geom.is_timelike_vector(v)? {
        return Err(Error::NotTimelike);
    }
    Ok(jet_from_metric(
        &geom.metric(&v.base),
        &geom.dtau(&v.base),
        &v.components,
    ))
}

/// Fiber derivative `dL/dv` at a strictly timelike `v`.
pub fn dlagrangian_dv(geom: &dyn Geometry, v: &TangentVector) -> Result<Covector> {
    let (_, grad, _) = timelike_jet(geom, v)?;
    Ok(Covector::new(v.base.clone(), grad))
}

/// Fiber Hessian `d^2 L / dv^2` at a strictly timelike `v`.
pub fn fiber_hessian(geom: &dyn Geometry, v: &TangentVector) -> Result<DMatrix<f64>> {
    Ok(timelike_jet(geom, v)?.2)
}

/// The Legendre transform `v -> dL/dv(x, v)`.
pub fn legendre(geom: &dyn Geometry, v: &TangentVector) -> Result<Covector> {
    dlagrangian_dv(geom, v)
}

/// Dual future cone test: `p v <= 0` for every causal `v`, equivalently
/// `G^{-1} p` is future causal.
pub fn in_dual_cone(geom: &dyn Geometry, p: &Covector) -> Result<bool> {
    geom.check_point(&p.base)?;
    let m = geom.metric(&p.base);
    let q = m
        .lu()
        .solve(&p.components)
        .ok_or_else(|| Error::InvalidInput("degenerate metric".into()))?;
    Ok(in_future_cone(&q))
}

/// Iteration cap shared by Newton and the bisection fallback.
pub const LEGENDRE_MAX_ITER: usize = 200;

/// Inverse of the Legendre transform on `T*M \ C*`.
///
/// Damped Newton on `dL/dv(v) = p` with the analytic fiber Hessian. When
/// Newton stalls and the geometry is flat at `x`, falls back to bisection in
/// the rapidity of the ray through `p`'s spatial direction.
pub fn legendre_inverse(geom: &dyn Geometry, p: &Covector) -> Result<TangentVector> {
    if in_dual_cone(geom, p)? {
        return Err(Error::InDualCone);
    }
    let x = &p.base;
    let metric = geom.metric(x);
    let dtau = geom.dtau(x);
    let scale = 1.0 + p.components.norm();
    let tol = 1e-14 * scale;

    let mut axis = DVector::zeros(geom.dim());
    axis[0] = 1.0;
    let (l_axis, _, _) = jet_from_metric(&metric, &dtau, &axis);
    let lam = p.components.dot(&axis) / (2.0 * l_axis);
    let mut v = axis * if lam > 0.0 { lam } else { 1.0 };

    let residual = |v: &DVector<f64>| {
        let (_, grad, _) = jet_from_metric(&metric, &dtau, v);
        grad - &p.components
    };
    let mut r = residual(&v);
    let mut rn = r.norm();
    for _ in 0..LEGENDRE_MAX_ITER {
        if rn <= tol {
            return Ok(TangentVector::new(x.clone(), v));
        }
        let (_, _, hess) = jet_from_metric(&metric, &dtau, &v);
        let Some(step) = hess.lu().solve(&r) else { break };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &v - &step * alpha;
            if crate::spacetime::in_open_future_cone(&trial) {
                let rt = residual(&trial);
                let rtn = rt.norm();
                if rtn < rn || rtn <= tol {
                    v = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn <= 1e3 * tol {
        return Ok(TangentVector::new(x.clone(), v));
    }
    flat_ray_inverse(&metric, &dtau, p).ok_or(Error::NoConvergence {
        iterations: LEGENDRE_MAX_ITER,
        residual: rn,
    })
}

/// Closed-form reduction for `G = diag(-1, 1, ..)` and `d tau = (a, 0, ..)`:
/// with `v = lambda (cosh th, sinh th w)`, the ratio `p_t/|p_z|` is a strictly
/// decreasing function of `th` and is inverted by bisection.
fn flat_ray_inverse(metric: &DMatrix<f64>, dtau: &DVector<f64>, p: &Covector) -> Option<TangentVector> {
    let n = metric.nrows();
    let mut eta = DMatrix::identity(n, n);
    eta[(0, 0)] = -1.0;
    let a = dtau[0];
    if (metric - eta).norm() > 0.0 || dtau.rows(1, n - 1).norm() > 0.0 || a <= 1.0 {
        return None;
    }
    let pt = p.components[0];
    let pz = p.components.rows(1, n - 1).into_owned();
    let pzn = pz.norm();
    let mut v = DVector::zeros(n);
    if pzn == 0.0 {
        if pt <= 0.0 {
            return None;
        }
        v[0] = pt / (2.0 * (a - 1.0) * (a - 1.0));
        return Some(TangentVector::new(p.base.clone(), v));
    }
    let target = pt / pzn;
    let ratio = |th: f64| (a - th.cosh()) / th.sinh();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut expand = 0;
    while ratio(hi) > target {
        lo = hi;
        hi *= 2.0;
        expand += 1;
        if expand > 60 {
            return None;
        }
    }
    for _ in 0..LEGENDRE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let th = 0.5 * (lo + hi);
    let lambda = pzn / (2.0 * (a * th.cosh() - 1.0) * th.sinh());
    v[0] = lambda * th.cosh();
    for k in 1..n {
        v[k] = lambda * th.sinh() * pz[k - 1] / pzn;
    }
    Some(TangentVector::new(p.base.clone(), v))
}

/// `H(x, p) = sup_v p v - L(x, v)`, attained at the Legendre preimage of `p`.
pub fn hamiltonian(geom: &dyn Geometry, p: &Covector) -> Result<f64> {
    let v = legendre_inverse(geom, p)?;
    let l = lagrangian(geom, &v)?.finite().ok_or(Error::NotCausal)?;
    Ok(p.pair(&v) - l)
}

/// The reaching-gradient triple `(d_t c_t, -dL/dv(x, gamma'(0)), dL/dv(y, gamma'(t)))`.
#[derive(Debug, Clone)]
pub struct CostSuperDifferential {
    pub dt: f64,
    pub dx: Covector,
    pub dy: Covector,
}

pub fn cost_superdifferential(
    geom: &dyn Geometry,
    t: f64,
    x: &SpacetimePoint,
    y: &SpacetimePoint,
) -> Result<CostSuperDifferential> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    if !geom.causal_relation(x, y)?.is_chronological() {
        return Err(Error::NotChronological);
    }
    let curve = geom.minimizer(x, y, t)?;
    let c1 = cost(geom, 1.0, x, y)?.finite().ok_or(Error::NotCausallyRelated)?;
    let start = dlagrangian_dv(geom, &curve.velocity(0.0))?;
    let end = dlagrangian_dv(geom, &curve.velocity(t))?;
    Ok(CostSuperDifferential {
        dt: -c1 / (t * t),
        dx: Covector::new(x.clone(), -start.components),
        dy: Covector::new(y.clone(), end.components),
    })
}

/// A constant with `L(x, v) >= K |v|_h - C(K)` on the causal cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearityConstant {
    pub k: f64,
    pub c_of_k: f64,
}

pub const SUPERLINEARITY_MARGIN: f64 = 1.01;

/// `C(K)`. Along a ray `lambda u` with `|u|_h = 1`, `K lambda - lambda^2 L(u)`
/// peaks at `K^2 / (4 L(u))`, so only the minimum of `L` over unit rays is needed.
pub fn superlinearity_constant(geom: &dyn Geometry, k: f64) -> Result<SuperlinearityConstant> {
    if !(k > 0.0) {
        return Err(Error::InvalidInput(format!("K must be positive, got {k}")));
    }
    let origin = SpacetimePoint(DVector::zeros(geom.dim()));
    let mut min_l = f64::INFINITY;
    for u in geom.causal_unit_rays(&origin, 4096) {
        let h = &geom.aux_metric(&u.base);
        let hn = u.components.dot(&(h * &u.components)).sqrt();
        let unit = u.scaled(1.0 / hn);
        if let ExtendedCost::Finite(l) = lagrangian(geom, &unit)? {
            min_l = min_l.min(l);
        }
    }
    Ok(SuperlinearityConstant {
        k,
        c_of_k: SUPERLINEARITY_MARGIN * k * k / (4.0 * min_l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::Minkowski;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(c: &[f64]) -> SpacetimePoint {
        SpacetimePoint::from_slice(c)
    }

    fn v(c: &[f64]) -> TangentVector {
        TangentVector::at_origin(c)
    }

    fn random_timelike(rng: &mut ChaCha8Rng, n: usize, max_speed: f64) -> TangentVector {
        let t: f64 = rng.gen_range(0.1..3.0);
        let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let speed = rng.gen_range(0.0..max_speed);
        let z = if dir.norm() > 0.0 { dir.normalize() * (speed * t) } else { dir };
        let mut c = vec![t];
        c.extend(z.iter());
        v(&c)
    }

    #[test]
    fn lagrangian_examples() {
        let g = Minkowski::new(1).unwrap();
        assert_eq!(lagrangian(&g, &v(&[1.0, 0.0])).unwrap(), ExtendedCost::Finite(1.0));
        assert_eq!(lagrangian(&g, &v(&[1.0, 1.0])).unwrap(), ExtendedCost::Finite(4.0));
        assert_eq!(lagrangian(&g, &v(&[0.0, 1.0])).unwrap(), ExtendedCost::Infinite);
    }

    #[test]
    fn cost_examples() {
        let g = Minkowski::new(1).unwrap();
        let o = p(&[0.0, 0.0]);
        assert_eq!(cost(&g, 1.0, &o, &p(&[2.0, 0.0])).unwrap(), ExtendedCost::Finite(4.0));
        assert_eq!(cost(&g, 2.0, &o, &p(&[2.0, 0.0])).unwrap(), ExtendedCost::Finite(2.0));
        assert_eq!(cost(&g, 1.0, &o, &p(&[0.0, 1.0])).unwrap(), ExtendedCost::Infinite);
        assert!(matches!(cost(&g, 0.0, &o, &o), Err(Error::NonpositiveTime(_))));
        assert!(matches!(cost(&g, -1.0, &o, &o), Err(Error::NonpositiveTime(_))));
    }

    #[test]
    fn fast_cost_agrees_with_generic_cost() {
        let g = Minkowski::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = p(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let y = p(&[rng.gen_range(-1.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let t = rng.gen_range(0.1..2.0);
            let a = cost(&g, t, &x, &y).unwrap();
            let b = minkowski_cost(t, x.coords(), y.coords());
            match (a, b) {
                (ExtendedCost::Finite(a), ExtendedCost::Finite(b)) => assert!((a - b).abs() <= 1e-14 * (1.0 + a)),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn action_examples() {
        let g = Minkowski::new(1).unwrap();
        let o = p(&[0.0, 0.0]);
        let c = g.minimizer(&o, &p(&[2.0, 0.0]), 1.0).unwrap();
        assert!((action(&g, &c, 16).unwrap() - 4.0).abs() < 1e-9);
        let c = g.minimizer(&o, &p(&[1.0, 1.0]), 1.0).unwrap();
        assert!((action(&g, &c, 16).unwrap() - 4.0).abs() < 1e-9);
        let c = g.minimizer(&o, &p(&[2.0, 0.0]), 2.0).unwrap();
        assert!((action(&g, &c, 16).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lagrangian_is_constant_along_minimizers() {
        let g = Minkowski::new(2).unwrap();
        let c = g.minimizer(&p(&[0.0, 0.0, 0.0]), &p(&[3.0, 1.0, -0.5]), 1.7).unwrap();
        let samples: Vec<f64> = (0..=50)
            .map(|k| lagrangian(&g, &c.velocity(1.7 * k as f64 / 50.0)).unwrap().to_f64())
            .collect();
        let max = samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / max < 1e-10);
    }

    #[test]
    fn minimizer_splitting_identity() {
        let g = Minkowski::new(1).unwrap();
        let (x, y, t) = (p(&[0.0, 0.0]), p(&[2.0, 0.7]), 1.3);
        let c = g.minimizer(&x, &y, t).unwrap();
        let total = cost(&g, t, &x, &y).unwrap().to_f64();
        for &(s, r) in &[(0.0, 0.5), (0.2, 0.9), (0.4, 1.3), (0.65, 0.65)] {
            let (gs, gr) = (c.position(s), c.position(r));
            let mut sum = cost(&g, t - r, &gr, &y).map(|c| c.to_f64()).unwrap_or(0.0);
            if s > 0.0 {
                sum += cost(&g, s, &x, &gs).unwrap().to_f64();
            }
            if r > s {
                sum += cost(&g, r - s, &gs, &gr).unwrap().to_f64();
            }
            assert!((sum - total).abs() < 1e-9, "s={s} r={r}: {sum} vs {total}");
        }
    }

    #[test]
    fn concatenation_minimum_is_attained_on_the_minimizer() {
        let g = Minkowski::new(1).unwrap();
        let (x, y) = (p(&[0.0, 0.0]), p(&[3.0, 1.0]));
        let (t, s) = (0.6, 0.9);
        let whole = cost(&g, t + s, &x, &y).unwrap().to_f64();
        let mid = g.minimizer(&x, &y, t + s).unwrap().position(t);
        let at_mid = cost(&g, t, &x, &mid).unwrap().to_f64() + cost(&g, s, &mid, &y).unwrap().to_f64();
        assert!((at_mid - whole).abs() < 1e-9);
        let mut best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let z = p(&[3.0 * i as f64 / 200.0, -1.0 + 3.0 * j as f64 / 200.0]);
                if let (ExtendedCost::Finite(a), ExtendedCost::Finite(b)) =
                    (cost(&g, t, &x, &z).unwrap(), cost(&g, s, &z, &y).unwrap())
                {
                    best = best.min(a + b);
                }
            }
        }
        assert!(best >= whole - 1e-9);
    }

    #[test]
    fn dldv_examples() {
        let g = Minkowski::new(1).unwrap();
        let d = dlagrangian_dv(&g, &v(&[1.0, 0.0])).unwrap();
        assert!((d.components - DVector::from_vec(vec![2.0, 0.0])).norm() < 1e-15);
        assert!(matches!(dlagrangian_dv(&g, &v(&[1.0, 1.0])), Err(Error::NotTimelike)));
        assert!(matches!(dlagrangian_dv(&g, &v(&[0.0, 1.0])), Err(Error::NotTimelike)));
    }

    #[test]
    fn euler_identity_dldv_v_is_twice_l() {
        let g = Minkowski::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let w = random_timelike(&mut rng, 2, 0.95);
            let lhs = dlagrangian_dv(&g, &w).unwrap().pair(&w);
            let l = lagrangian(&g, &w).unwrap().to_f64();
            assert!((lhs - 2.0 * l).abs() <= 1e-12 * (1.0 + l));
        }
    }

    #[test]
    fn dldv_matches_finite_differences() {
        let g = Minkowski::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = random_timelike(&mut rng, 2, 0.9);
            let d = dlagrangian_dv(&g, &w).unwrap().components;
            let hess = fiber_hessian(&g, &w).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut up = w.clone();
                up.components[k] += h;
                let mut dn = w.clone();
                dn.components[k] -= h;
                let fd = (lagrangian(&g, &up).unwrap().to_f64() - lagrangian(&g, &dn).unwrap().to_f64()) / (2.0 * h);
                assert!((fd - d[k]).abs() < 1e-6 * (1.0 + d.norm()));
                let fdg = (dlagrangian_dv(&g, &up).unwrap().components - dlagrangian_dv(&g, &dn).unwrap().components) / (2.0 * h);
                assert!((fdg - hess.column(k)).norm() < 1e-5 * (1.0 + hess.norm()));
            }
        }
    }

    #[test]
    fn legendre_examples() {
        let g = Minkowski::new(1).unwrap();
        let q = legendre(&g, &v(&[1.0, 0.0])).unwrap();
        assert!((q.components[0] - 2.0).abs() < 1e-15 && q.components[1].abs() < 1e-15);
        let back = legendre_inverse(&g, &Covector::at_origin(&[2.0, 0.0])).unwrap();
        assert!((back.components - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-12);
        assert!(matches!(
            legendre_inverse(&g, &Covector::at_origin(&[-1.0, 0.0])),
            Err(Error::InDualCone)
        ));
        assert!(in_dual_cone(&g, &Covector::at_origin(&[-1.0, 0.5])).unwrap());
        assert!(!in_dual_cone(&g, &Covector::at_origin(&[-0.5, 1.0])).unwrap());
    }

    #[test]
    fn flat_ray_fallback_inverts_legendre() {
        let g = Minkowski::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let metric = g.metric(&p(&[0.0, 0.0, 0.0]));
        let dtau = g.dtau(&p(&[0.0, 0.0, 0.0]));
        for _ in 0..200 {
            let w = random_timelike(&mut rng, 2, 0.99);
            let q = legendre(&g, &w).unwrap();
            let back = flat_ray_inverse(&metric, &dtau, &q).unwrap();
            assert!((back.components - &w.components).norm() < 1e-9 * (1.0 + w.components.norm()));
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let g = Minkowski::new(1).unwrap();
        assert!((hamiltonian(&g, &Covector::at_origin(&[2.0, 0.0])).unwrap() - 1.0).abs() < 1e-12);
        let h4 = hamiltonian(&g, &Covector::at_origin(&[4.0, 0.0])).unwrap();
        assert!((h4 - 4.0).abs() < 1e-12);
        // Brute-force sup of p v - L(v) over a grid on the cone.
        let mut best = f64::MIN;
        for i in 0..=400 {
            for j in 0..=400 {
                let t = 4.0 * i as f64 / 400.0;
                let z = t * (-1.0 + 2.0 * j as f64 / 400.0);
                let w = v(&[t, z]);
                let l = lagrangian(&g, &w).unwrap().to_f64();
                best = best.max(4.0 * t - l);
            }
        }
        assert!((best - h4).abs() < 1e-3, "grid sup {best}");
        assert!(best <= h4 + 1e-12);
        assert!(matches!(hamiltonian(&g, &Covector::at_origin(&[-2.0, 1.0])), Err(Error::InDualCone)));
    }

    #[test]
    fn superdifferential_example() {
        let g = Minkowski::new(1).unwrap();
        let sd = cost_superdifferential(&g, 1.0, &p(&[0.0, 0.0]), &p(&[2.0, 0.0])).unwrap();
        assert_eq!(sd.dt, -4.0);
        assert!((sd.dx.components - DVector::from_vec(vec![-4.0, 0.0])).norm() < 1e-14);
        assert!((sd.dy.components - DVector::from_vec(vec![4.0, 0.0])).norm() < 1e-14);
        assert!(matches!(
            cost_superdifferential(&g, 1.0, &p(&[0.0, 0.0]), &p(&[1.0, 1.0])),
            Err(Error::NotChronological)
        ));
    }

    #[test]
    fn superlinearity_certificate_on_random_vectors() {
        let g = Minkowski::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ks = [0.1, 0.5, 1.0, 2.0, 5.0, 20.0];
        let consts: Vec<_> = ks.iter().map(|&k| superlinearity_constant(&g, k).unwrap()).collect();
        for w in consts.windows(2) {
            assert!(w[0].c_of_k <= w[1].c_of_k);
        }
        for _ in 0..100_000 {
            let t: f64 = rng.gen_range(0.0..10.0);
            let r = t * rng.gen_range(0.0..1.0_f64);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let w = v(&[t, r * a.cos(), r * a.sin()]);
            let l = lagrangian(&g, &w).unwrap().to_f64();
            let h = w.components.norm();
            for c in &consts {
                assert!(l >= c.k * h - c.c_of_k);
            }
        }
    }
}
