//! Exact maximisation of the weighted objective over per-bus candidate
//! magnitudes on a tree.
//!
//! For a branch from parent p to child c with y = g + jβ and
//! θ = θ_p − θ_c, its share of Σ λ_i P_i is
//!
//! ```text
//! w = g (λ_p a_p² + λ_c a_c²) − g (λ_p + λ_c) a_p a_c cos θ + β (λ_c − λ_p) a_p a_c sin θ
//! ```
//!
//! Every bus adds `λ_i g_sh a_i²`. On a tree, fixing the magnitudes leaves
//! each branch angle free on its own, so dynamic programming over the
//! candidates solves the problem exactly.

use crate::error::{Error, Result};
use crate::netmodel::Parity;

use super::Problem;

/// Angle-free data of one branch, oriented parent to child.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgeTerm {
    pub g: f64,
    pub beta: f64,
    pub lp: f64,
    pub lc: f64,
    /// Largest allowed |V_p − V_c|, i.e. C / |y|.
    pub reach: Option<f64>,
    /// Sign of θ_p − θ_c when both signs are equally good.
    pub sign: f64,
}

impl EdgeTerm {
    pub fn of(prob: &Problem, child: usize, thermal: bool) -> EdgeTerm {
        let parent = prob.tree.parent[child].expect("child has a parent");
        let br = &prob.net.branches()[prob.tree.parent_branch[child].expect("child has a branch")];
        let y = br.admittance();
        let buses = prob.net.buses();
        // the child leads whenever its parent sits at even parity
        let sign = match prob.parity(parent) {
            Parity::Even => -1.0,
            Parity::Odd => 1.0,
        };
        EdgeTerm {
            g: y.re,
            beta: y.im,
            lp: buses[parent].lambda,
            lc: buses[child].lambda,
            reach: if thermal { br.thermal_limit.map(|c| c / y.norm()) } else { None },
            sign,
        }
    }

    /// Largest |θ| such that the branch stays within its current limit,
    /// capped at `theta_m`. `None` when no angle satisfies the limit.
    pub fn angle_limit(&self, a: f64, b: f64, theta_m: f64) -> Option<f64> {
        let Some(d) = self.reach else { return Some(theta_m) };
        if (a - b).abs() > d * (1.0 + 1e-10) {
            return None;
        }
        let cos_d = (a * a + b * b - d * d) / (2.0 * a * b);
        if cos_d >= 1.0 {
            Some(0.0)
        } else if cos_d <= -1.0 {
            Some(theta_m)
        } else {
            Some(cos_d.acos().min(theta_m))
        }
    }

    pub fn value(&self, a: f64, b: f64, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.g * (self.lp * a * a + self.lc * b * b) - self.g * (self.lp + self.lc) * a * b * c
            + self.beta * (self.lc - self.lp) * a * b * s
    }

    /// Best angle in [−t, t] and the resulting branch value.
    pub fn best(&self, a: f64, b: f64, t: f64) -> (f64, f64) {
        let big_a = self.g * (self.lp + self.lc);
        let big_b = self.beta * (self.lc - self.lp);
        let theta = if big_b == 0.0 {
            self.sign * t
        } else {
            let phi = big_b.atan2(-big_a);
            if phi.abs() <= t {
                phi
            } else {
                t.copysign(big_b)
            }
        };
        (self.value(a, b, theta), theta)
    }
}

pub(crate) fn node_value(prob: &Problem, i: usize, a: f64) -> f64 {
    let bus = &prob.net.buses()[i];
    bus.lambda * bus.shunt.re * a * a
}

#[derive(Debug, Clone)]
pub(crate) struct Assignment {
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
    pub value: f64,
}

fn improves(candidate: f64, best: f64) -> bool {
    if best == f64::NEG_INFINITY {
        return candidate > best;
    }
    candidate > best + 1e-12 * best.abs().max(1.0)
}

/// Maximises the objective with bus i restricted to `cands[i]`. Earlier
/// entries win ties, so callers list the preferred value first.
pub(crate) fn tree_search(prob: &Problem, cands: &[Vec<f64>], thermal: bool) -> Result<Assignment> {
    let n = prob.net.len();
    let theta_m = prob.c.theta_eff();
    let tree = &prob.tree;
    let mut value: Vec<Vec<f64>> = vec![Vec::new(); n];
    // choice[c][k]: (child candidate, θ_p − θ_c) for parent candidate k
    let mut choice: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let edges: Vec<Option<EdgeTerm>> =
        (0..n).map(|i| tree.parent[i].map(|_| EdgeTerm::of(prob, i, thermal))).collect();

    for i in tree.post_order() {
        let mut vals: Vec<f64> = cands[i].iter().map(|&a| node_value(prob, i, a)).collect();
        for &c in &tree.children[i] {
            let edge = edges[c].expect("non-root bus");
            let mut picks = Vec::with_capacity(cands[i].len());
            for (k, &a) in cands[i].iter().enumerate() {
                let mut best = (f64::NEG_INFINITY, usize::MAX, 0.0);
                for (kc, &b) in cands[c].iter().enumerate() {
                    let sub = value[c][kc];
                    if sub == f64::NEG_INFINITY {
                        continue;
                    }
                    let Some(t) = edge.angle_limit(a, b, theta_m) else { continue };
                    let (w, theta) = edge.best(a, b, t);
                    if improves(w + sub, best.0) {
                        best = (w + sub, kc, theta);
                    }
                }
                vals[k] += best.0;
                picks.push((best.1, best.2));
            }
            choice[c] = picks;
        }
        value[i] = vals;
    }

    let root = tree.root;
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (k, &v) in value[root].iter().enumerate() {
        if improves(v, best.0) {
            best = (v, k);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(infeasible_branch(prob, cands, &edges));
    }

    let mut pick = vec![usize::MAX; n];
    let mut magnitudes = vec![0.0; n];
    let mut angles = vec![0.0; n];
    pick[root] = best.1;
    for &i in &tree.order {
        if let Some(p) = tree.parent[i] {
            let (kc, theta) = choice[i][pick[p]];
            pick[i] = kc;
            angles[i] = angles[p] - theta;
        }
        magnitudes[i] = cands[i][pick[i]];
    }
    Ok(Assignment { magnitudes, angles, value: best.0 })
}

fn infeasible_branch(prob: &Problem, cands: &[Vec<f64>], edges: &[Option<EdgeTerm>]) -> Error {
    let tree = &prob.tree;
    let theta_m = prob.c.theta_eff();
    let ids = |i: usize| prob.net.buses()[i].id;
    // prefer a branch that no candidate pair can satisfy on its own
    for &c in &tree.order {
        let (Some(p), Some(edge)) = (tree.parent[c], edges[c]) else { continue };
        let any = cands[p].iter().any(|&a| cands[c].iter().any(|&b| edge.angle_limit(a, b, theta_m).is_some()));
        if !any {
            return Error::ThermalInfeasible { from: ids(p), to: ids(c) };
        }
    }
    let first = tree.order.iter().find(|&&c| edges[c].is_some_and(|e| e.reach.is_some()));
    match first {
        Some(&c) => Error::ThermalInfeasible { from: ids(tree.parent[c].unwrap()), to: ids(c) },
        None => Error::Verification("no feasible magnitude assignment".into()),
    }
}
