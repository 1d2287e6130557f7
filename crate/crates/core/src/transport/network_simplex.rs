//! Primal network simplex for uncapacitated min-cost flow with node supplies.
//!
//! Two phases over an artificial root: phase one drives the artificial flow
//! to zero (or proves infeasibility), phase two optimizes the real costs with
//! the artificial arcs frozen. Bland's rule on both entering and leaving arcs
//! keeps degenerate pivots from cycling. Node potentials of the final tree
//! are returned as duals.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Arc {
    from: usize,
    to: usize,
    cost: f64,
    cap: f64,
    flow: f64,
    artificial: bool,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Flow on each real arc, in input order.
    pub flows: Vec<f64>,
    /// Node potentials `pi` with `cost + pi[from] - pi[to] >= 0` on every arc.
    pub potentials: Vec<f64>,
    pub total_cost: f64,
    pub pivots: usize,
}

pub struct NetworkSimplex {
    n_nodes: usize,
    arcs: Vec<Arc>,
    n_real: usize,
    in_tree: Vec<bool>,
    potential: Vec<f64>,
    parent_arc: Vec<Option<usize>>,
    depth: Vec<usize>,
    pivots: usize,
}

impl NetworkSimplex {
    /// `supply[v] > 0` marks a source, `< 0` a sink. Arcs are `(from, to, cost)`
    /// with unbounded capacity.
    pub fn new(supply: &[f64], arcs: &[(usize, usize, f64)]) -> Self {
        let n = supply.len();
        let root = n;
        let mut all: Vec<Arc> = arcs
            .iter()
            .map(|&(from, to, cost)| Arc {
                from,
                to,
                cost,
                cap: f64::INFINITY,
                flow: 0.0,
                artificial: false,
            })
            .collect();
        let n_real = all.len();
        for (v, &b) in supply.iter().enumerate() {
            let (from, to) = if b >= 0.0 { (v, root) } else { (root, v) };
            all.push(Arc {
                from,
                to,
                cost: 0.0,
                cap: f64::INFINITY,
                flow: b.abs(),
                artificial: true,
            });
        }
        let mut in_tree = vec![false; all.len()];
        for flag in in_tree.iter_mut().skip(n_real) {
            *flag = true;
        }
        Self {
            n_nodes: n + 1,
            arcs: all,
            n_real,
            in_tree,
            potential: vec![0.0; n + 1],
            parent_arc: vec![None; n + 1],
            depth: vec![0; n + 1],
            pivots: 0,
        }
    }

    fn root(&self) -> usize {
        self.n_nodes - 1
    }

    fn rebuild_tree(&mut self) {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n_nodes];
        for (e, arc) in self.arcs.iter().enumerate() {
            if self.in_tree[e] {
                adj[arc.from].push(e);
                adj[arc.to].push(e);
            }
        }
        let root = self.root();
        let mut seen = vec![false; self.n_nodes];
        seen[root] = true;
        self.parent_arc[root] = None;
        self.depth[root] = 0;
        self.potential[root] = 0.0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &e in &adj[u] {
                let arc = &self.arcs[e];
                let w = if arc.from == u { arc.to } else { arc.from };
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                self.parent_arc[w] = Some(e);
                self.depth[w] = self.depth[u] + 1;
                // Tree arcs have zero reduced cost.
                self.potential[w] = if arc.from == u {
                    self.potential[u] + arc.cost
                } else {
                    self.potential[u] - arc.cost
                };
                queue.push_back(w);
            }
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let a = &self.arcs[e];
        a.cost + self.potential[a.from] - self.potential[a.to]
    }

    fn other_end(&self, e: usize, v: usize) -> usize {
        let a = &self.arcs[e];
        if a.from == v {
            a.to
        } else {
            a.from
        }
    }

    /// Tree path from `b` to `a` as `(arc, traversed_forward)` pairs.
    fn tree_path(&self, b: usize, a: usize) -> Vec<(usize, bool)> {
        let mut up = Vec::new();
        let mut down = Vec::new();
        let (mut u, mut w) = (b, a);
        while u != w {
            if self.depth[u] >= self.depth[w] {
                let e = self.parent_arc[u].expect("non-root node has a parent");
                up.push((e, self.arcs[e].from == u));
                u = self.other_end(e, u);
            } else {
                let e = self.parent_arc[w].expect("non-root node has a parent");
                down.push((e, self.arcs[e].to == w));
                w = self.other_end(e, w);
            }
        }
        down.reverse();
        up.extend(down);
        up
    }

    fn run_phase(&mut self, tol: f64) -> Result<()> {
        let max_pivots = 50 * (self.arcs.len() + self.n_nodes) + 1000;
        self.rebuild_tree();
        loop {
            let entering = (0..self.arcs.len()).find(|&e| {
                if self.in_tree[e] {
                    return false;
                }
                let a = &self.arcs[e];
                let rc = self.reduced_cost(e);
                (a.flow < a.cap && rc < -tol) || (a.flow > 0.0 && rc > tol)
            });
            let Some(e) = entering else { return Ok(()) };
            self.pivots += 1;
            if self.pivots > max_pivots {
                return Err(Error::NoConvergence {
                    iterations: self.pivots,
                    residual: self.reduced_cost(e).abs(),
                });
            }
            let increase = self.reduced_cost(e) < 0.0;
            let (a, b) = if increase {
                (self.arcs[e].from, self.arcs[e].to)
            } else {
                (self.arcs[e].to, self.arcs[e].from)
            };
            let mut cycle = vec![(e, increase)];
            cycle.extend(self.tree_path(b, a));
            let residual = |arc: &Arc, fwd: bool| if fwd { arc.cap - arc.flow } else { arc.flow };
            let delta = cycle
                .iter()
                .map(|&(k, fwd)| residual(&self.arcs[k], fwd))
                .fold(f64::INFINITY, f64::min);
            if !delta.is_finite() {
                return Err(Error::InvalidInput("unbounded min-cost flow".into()));
            }
            let leaving = cycle
                .iter()
                .filter(|&&(k, fwd)| residual(&self.arcs[k], fwd) <= delta)
                .map(|&(k, _)| k)
                .min()
                .expect("cycle is nonempty");
            for &(k, fwd) in &cycle {
                let arc = &mut self.arcs[k];
                if fwd {
                    arc.flow += delta;
                } else {
                    arc.flow -= delta;
                }
                if arc.flow < 0.0 {
                    arc.flow = 0.0;
                }
            }
            // Pin the blocking arc exactly at its bound.
            {
                let fwd = cycle.iter().find(|&&(k, _)| k == leaving).map(|&(_, f)| f).unwrap();
                let arc = &mut self.arcs[leaving];
                arc.flow = if fwd { arc.cap } else { 0.0 };
            }
            if leaving != e {
                self.in_tree[leaving] = false;
                self.in_tree[e] = true;
                self.rebuild_tree();
            }
        }
    }

    /// Solve the two phases. `infeasibility_tol` bounds the artificial flow
    /// left after phase one (it absorbs any rounding imbalance in the supplies).
    pub fn solve(mut self, infeasibility_tol: f64) -> Result<FlowSolution> {
        let scale = self.arcs[..self.n_real]
            .iter()
            .map(|a| a.cost.abs())
            .fold(1.0, f64::max);
        let real_costs: Vec<f64> = self.arcs[..self.n_real].iter().map(|a| a.cost).collect();
        for a in self.arcs.iter_mut() {
            a.cost = if a.artificial { 1.0 } else { 0.0 };
        }
        self.run_phase(1e-13)?;
        let leftover: f64 = self.arcs[self.n_real..].iter().map(|a| a.flow).sum();
        if leftover > infeasibility_tol {
            return Err(Error::Infeasible);
        }
        for (a, &c) in self.arcs.iter_mut().zip(&real_costs) {
            a.cost = c;
        }
        for a in self.arcs[self.n_real..].iter_mut() {
            a.cost = 0.0;
            a.cap = a.flow;
        }
        self.run_phase(1e-13 * scale)?;
        let flows: Vec<f64> = self.arcs[..self.n_real].iter().map(|a| a.flow).collect();
        let total_cost = flows.iter().zip(&real_costs).map(|(f, c)| f * c).sum();
        let mut potentials = self.potential.clone();
        potentials.pop();
        Ok(FlowSolution {
            flows,
            potentials,
            total_cost,
            pivots: self.pivots,
        })
    }
}
