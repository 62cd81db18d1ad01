//! Local solver for the power-factor-constrained problem.
//!
//! The variables are the decision magnitudes and one angle difference
//! δ = θ_p − θ_c per branch. The box and angle limits are plain bounds,
//! and the thermal limits and power-factor floors are smooth
//! inequalities. Each generator bus keeps the sign `s` of its active
//! injection at the starting point, so its floor becomes two constraints
//! that are linear in (P, Q): `±Q − k s P ≤ 0`.
//!
//! The method is an ℓ1-penalty SQP with a trust region. Small problems
//! use damped BFGS curvature; larger ones use the Lagrangian Hessian
//! with each branch block made positive semidefinite, which is sparse. Each quadratic subproblem is solved by Clarabel, with
//! elastic slacks so that it is always feasible.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use nalgebra::{DMatrix, DVector};

use crate::powerflow::{evaluate_injections, jacobian, VoltageState};

use super::check::wrap;
use super::{weighted_hc, Problem};

pub(crate) const MAX_ITER: usize = 300;
const TRUST_INIT: f64 = 0.05;
const TRUST_MIN: f64 = 1e-13;
const STEP_TOL: f64 = 1e-9;
/// Up to this many variables the curvature is a dense BFGS matrix;
/// beyond it, the sparse block Hessian keeps the subproblems cheap.
const DENSE_LIMIT: usize = 40;
/// Constraints are enforced with this much room so the final state
/// passes the strict checks.
const PF_MARGIN: f64 = 1e-9;
const THERMAL_MARGIN: f64 = 1e-10;
/// Scale of the HC floor row in restoration mode, so the penalty treats
/// a drop in HC as much worse than a limit violation.
const FLOOR_WEIGHT: f64 = 1e3;

struct Layout<'p, 'a> {
    prob: &'p Problem<'a>,
    /// Decision buses whose magnitude is a variable.
    free: Vec<usize>,
    /// Non-root buses in BFS order; variable `free.len() + e` is the
    /// angle difference across the branch above `edges[e]`.
    edges: Vec<usize>,
    pf: Vec<(usize, f64)>,
    thermal: Vec<(usize, f64)>,
    k: f64,
    /// In restoration mode, the weighted HC the state must keep.
    floor: Option<f64>,
}

/// What the local solver optimises.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Goal {
    /// Maximise the weighted HC subject to the limits.
    Maximise,
    /// Minimise the limit violation while keeping the weighted HC at or
    /// above the given value.
    Restore(f64),
}

struct Eval {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jac: DMatrix<f64>,
}

impl<'p, 'a> Layout<'p, 'a> {
    fn new(prob: &'p Problem<'a>, seed: &VoltageState, eta: f64, goal: Goal) -> Option<Self> {
        let n = prob.net.len();
        let free: Vec<usize> = (0..n).filter(|&i| prob.fixed(i).is_none()).collect();
        let edges: Vec<usize> = prob.tree.order.iter().copied().filter(|&i| prob.tree.parent[i].is_some()).collect();
        let inj = evaluate_injections(prob.net, seed).ok()?;
        let pf = (0..n)
            .filter(|&i| prob.pf_applies(i))
            .map(|i| (i, if inj.p[i] >= 0.0 { 1.0 } else { -1.0 }))
            .collect();
        let thermal = edges
            .iter()
            .filter_map(|&c| {
                let br = &prob.net.branches()[prob.tree.parent_branch[c]?];
                let d = br.thermal_limit? / br.admittance().norm();
                Some((c, d * d * (1.0 - THERMAL_MARGIN)))
            })
            .collect();
        let k = (1.0 - eta * eta).max(0.0).sqrt() / eta * (1.0 - PF_MARGIN);
        let floor = match goal {
            Goal::Maximise => None,
            Goal::Restore(hc) => Some(hc - 1e-10 * hc.abs().max(1.0)),
        };
        Some(Layout { prob, free, edges, pf, thermal, k, floor })
    }

    fn dim(&self) -> usize {
        self.free.len() + self.edges.len()
    }

    fn constraints(&self) -> usize {
        2 * self.pf.len() + self.thermal.len() + usize::from(self.floor.is_some())
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.prob.c;
        let t = c.theta_eff();
        let mut lo = vec![c.v_min; self.free.len()];
        let mut hi = vec![c.v_max; self.free.len()];
        lo.extend(std::iter::repeat_n(-t, self.edges.len()));
        hi.extend(std::iter::repeat_n(t, self.edges.len()));
        (lo, hi)
    }

    fn to_vars(&self, s: &VoltageState) -> DVector<f64> {
        let (lo, hi) = self.bounds();
        let mut x = DVector::zeros(self.dim());
        for (r, &i) in self.free.iter().enumerate() {
            x[r] = s.magnitudes[i];
        }
        for (e, &c) in self.edges.iter().enumerate() {
            let p = self.prob.tree.parent[c].unwrap();
            x[self.free.len() + e] = wrap(s.angles[p] - s.angles[c]);
        }
        for r in 0..x.len() {
            x[r] = x[r].clamp(lo[r], hi[r]);
        }
        x
    }

    fn to_state(&self, x: &DVector<f64>) -> VoltageState {
        let n = self.prob.net.len();
        let mut magnitudes: Vec<f64> = (0..n).map(|i| self.prob.fixed(i).unwrap_or(0.0)).collect();
        for (r, &i) in self.free.iter().enumerate() {
            magnitudes[i] = x[r];
        }
        let mut angles = vec![0.0; n];
        // edges are in BFS order, so parents are placed first
        for (e, &c) in self.edges.iter().enumerate() {
            let p = self.prob.tree.parent[c].unwrap();
            angles[c] = angles[p] - x[self.free.len() + e];
        }
        VoltageState { magnitudes, angles }
    }

    /// Maps ∂/∂θ (per bus) to ∂/∂δ (per branch): raising δ on the branch
    /// above c lowers every angle in c's subtree.
    fn angle_to_edge(&self, g_theta: &[f64], out: &mut [f64]) {
        let tree = &self.prob.tree;
        let mut sub = g_theta.to_vec();
        for i in tree.post_order() {
            if let Some(p) = tree.parent[i] {
                sub[p] += sub[i];
            }
        }
        for (e, &c) in self.edges.iter().enumerate() {
            out[e] = -sub[c];
        }
    }

    /// Hessian of the Lagrangian f + zᵀc. Each branch contributes a block
    /// on (a_p, a_c, δ) and each bus a diagonal term; every block is
    /// clipped to be positive semidefinite, so the sum is too.
    fn hessian(&self, x: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        let net = self.prob.net;
        let n = net.len();
        let nf = self.free.len();
        let state = self.to_state(x);
        let var = |i: usize| self.free.iter().position(|&v| v == i);
        // weights of P_i and Q_i in the Lagrangian
        let w = match self.floor {
            None => 1.0,
            Some(_) => FLOOR_WEIGHT * z[self.constraints() - 1],
        };
        let mut alpha: Vec<f64> = net.buses().iter().map(|b| -w * b.lambda).collect();
        let mut beta = vec![0.0; n];
        for (r, &(i, s)) in self.pf.iter().enumerate() {
            let (zp, zm) = (z[2 * r], z[2 * r + 1]);
            alpha[i] -= self.k * s * (zp + zm);
            beta[i] += zp - zm;
        }
        let mut zt = vec![0.0; n];
        for (r, &(c, _)) in self.thermal.iter().enumerate() {
            zt[c] = z[2 * self.pf.len() + r];
        }

        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for (i, bus) in net.buses().iter().enumerate() {
            if let Some(r) = var(i) {
                let d = 2.0 * (alpha[i] * bus.shunt.re - beta[i] * bus.shunt.im);
                h[(r, r)] += d.max(0.0);
            }
        }
        for (e, &c) in self.edges.iter().enumerate() {
            let p = self.prob.tree.parent[c].unwrap();
            let y = net.branches()[self.prob.tree.parent_branch[c].unwrap()].admittance();
            let (g, b) = (y.re, y.im);
            let (ap, ac) = (state.magnitudes[p], state.magnitudes[c]);
            let (sn, cs) = x[nf + e].sin_cos();
            let big_a = alpha[p] * g - beta[p] * b + zt[c];
            let big_c = alpha[c] * g - beta[c] * b + zt[c];
            let u = -g * (alpha[p] + alpha[c]) + b * (beta[p] + beta[c]) - 2.0 * zt[c];
            let v = b * (alpha[c] - alpha[p]) + g * (beta[c] - beta[p]);
            let cross = u * cs + v * sn;
            let turn = -u * sn + v * cs;
            let block = nalgebra::Matrix3::new(
                2.0 * big_a, cross, ac * turn,
                cross, 2.0 * big_c, ap * turn,
                ac * turn, ap * turn, -ap * ac * cross,
            );
            let idx = [var(p), var(c), Some(nf + e)];
            let eig = block.symmetric_eigen();
            let clipped = eig.eigenvectors
                * nalgebra::Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)))
                * eig.eigenvectors.transpose();
            for (r, ir) in idx.iter().enumerate() {
                for (k, ik) in idx.iter().enumerate() {
                    if let (Some(ir), Some(ik)) = (ir, ik) {
                        h[(*ir, *ik)] += clipped[(r, k)];
                    }
                }
            }
        }
        h
    }

    fn eval(&self, x: &DVector<f64>) -> Option<Eval> {
        let net = self.prob.net;
        let n = net.len();
        let nf = self.free.len();
        let state = self.to_state(x);
        let inj = evaluate_injections(net, &state).ok()?;
        let j = jacobian(net, &state, &inj);
        let lambda: Vec<f64> = net.buses().iter().map(|b| b.lambda).collect();

        // row gradient of a linear combination Σ w_i (α P_i + β Q_i)
        let row = |weights: &[(usize, f64, f64)]| -> DVector<f64> {
            let mut g = DVector::zeros(self.dim());
            let mut gt = vec![0.0; n];
            for &(i, wp, wq) in weights {
                for (r, &b) in self.free.iter().enumerate() {
                    g[r] += wp * j.dp_da[(i, b)] + wq * j.dq_da[(i, b)];
                }
                for (b, slot) in gt.iter_mut().enumerate() {
                    *slot += wp * j.dp_dt[(i, b)] + wq * j.dq_dt[(i, b)];
                }
            }
            let mut ge = vec![0.0; self.edges.len()];
            self.angle_to_edge(&gt, &mut ge);
            for (e, v) in ge.into_iter().enumerate() {
                g[nf + e] = v;
            }
            g
        };

        let obj: Vec<(usize, f64, f64)> =
            (0..n).filter(|&i| lambda[i] != 0.0).map(|i| (i, -lambda[i], 0.0)).collect();
        let mut f = -(0..n).map(|i| lambda[i] * inj.p[i]).sum::<f64>();
        let mut grad = row(&obj);

        let m = self.constraints();
        let mut c = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, self.dim());
        let mut r = 0;
        for &(i, s) in &self.pf {
            for side in [1.0, -1.0] {
                c[r] = side * inj.q[i] - self.k * s * inj.p[i];
                jac.set_row(r, &row(&[(i, -self.k * s, side)]).transpose());
                r += 1;
            }
        }
        for &(cb, d2) in &self.thermal {
            let p = self.prob.tree.parent[cb].unwrap();
            let (a, b) = (state.magnitudes[p], state.magnitudes[cb]);
            let t = state.angles[p] - state.angles[cb];
            c[r] = a * a + b * b - 2.0 * a * b * t.cos() - d2;
            let mut g = DVector::zeros(self.dim());
            if let Some(rp) = self.free.iter().position(|&v| v == p) {
                g[rp] = 2.0 * a - 2.0 * b * t.cos();
            }
            if let Some(rc) = self.free.iter().position(|&v| v == cb) {
                g[rc] = 2.0 * b - 2.0 * a * t.cos();
            }
            let e = self.edges.iter().position(|&v| v == cb).unwrap();
            g[nf + e] = 2.0 * a * b * t.sin();
            jac.set_row(r, &g.transpose());
            r += 1;
        }
        if let Some(hc) = self.floor {
            c[r] = FLOOR_WEIGHT * (f + hc);
            jac.set_row(r, &(&grad * FLOOR_WEIGHT).transpose());
            f = 0.0;
            grad.fill(0.0);
        }
        Some(Eval { f, grad, c, jac })
    }
}

/// Damped BFGS update of the Lagrangian Hessian approximation.
fn bfgs(bmat: &mut DMatrix<f64>, s: &DVector<f64>, old: &Eval, new: &Eval, z: &DVector<f64>) {
    let gl_old = &old.grad + old.jac.transpose() * z;
    let gl_new = &new.grad + new.jac.transpose() * z;
    let mut y = gl_new - gl_old;
    let bs = &*bmat * s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-300 {
        return;
    }
    let sy = s.dot(&y);
    if sy < 0.2 * sbs {
        let th = 0.8 * sbs / (sbs - sy);
        y = &y * th + &bs * (1.0 - th);
    }
    let sy = s.dot(&y);
    if sy > 1e-300 {
        *bmat += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
    }
}

fn violation(c: &DVector<f64>) -> f64 {
    c.iter().map(|v| v.max(0.0)).sum()
}

struct Step {
    d: DVector<f64>,
    z: DVector<f64>,
    model: f64,
}

/// min ½ dᵀBd + gᵀd + ρ Σ t  s.t.  c + J d ≤ t, t ≥ 0, lo ≤ d ≤ hi.
fn subproblem(b: &DMatrix<f64>, ev: &Eval, rho: f64, lo: &[f64], hi: &[f64]) -> Option<Step> {
    let nx = b.nrows();
    let m = ev.c.len();
    let nz = nx + m;

    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for col in 0..nx {
        for rw in 0..=col {
            let v = 0.5 * (b[(rw, col)] + b[(col, rw)]);
            if v != 0.0 {
                pi.push(rw);
                pj.push(col);
                pv.push(v);
            }
        }
    }
    let p = CscMatrix::new_from_triplets(nz, nz, pi, pj, pv);
    let mut q: Vec<f64> = ev.grad.iter().copied().collect();
    q.extend(std::iter::repeat_n(rho, m));

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut rhs = Vec::new();
    let mut push = |row: usize, col: usize, v: f64| {
        ai.push(row);
        aj.push(col);
        av.push(v);
    };
    for k in 0..m {
        // drop round-off left where subtree sums cancel
        let floor = 1e-13 * ev.jac.row(k).amax();
        for col in 0..nx {
            let v = ev.jac[(k, col)];
            if v.abs() > floor {
                push(k, col, v);
            }
        }
        push(k, nx + k, -1.0);
        push(m + k, nx + k, -1.0);
    }
    rhs.extend(ev.c.iter().map(|c| -c));
    rhs.extend(std::iter::repeat_n(0.0, m));
    for col in 0..nx {
        push(2 * m + 2 * col, col, 1.0);
        push(2 * m + 2 * col + 1, col, -1.0);
        rhs.push(hi[col]);
        rhs.push(-lo[col]);
    }
    let rows = rhs.len();
    let a = CscMatrix::new_from_triplets(rows, nz, ai, aj, av);
    let cones = [NonnegativeConeT(rows)];
    let settings = DefaultSettings { verbose: false, max_iter: 200, ..DefaultSettings::default() };
    let mut solver = DefaultSolver::new(&p, &q, &a, &rhs, &cones, settings).ok()?;
    solver.solve();
    if !matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return None;
    }
    let mut d = DVector::from_column_slice(&solver.solution.x[..nx]);
    for (k, v) in d.iter_mut().enumerate() {
        *v = v.clamp(lo[k], hi[k]);
    }
    let z = DVector::from_column_slice(&solver.solution.z[..m]);
    let lin = &ev.c + &ev.jac * &d;
    let model = ev.f + ev.grad.dot(&d) + 0.5 * d.dot(&(b * &d)) + rho * violation(&lin);
    Some(Step { d, z, model })
}

/// Runs at most `max_iter` iterations of the local solver from `seed`.
/// Returns the final state (feasibility is checked by the caller) and a
/// score that rewards objective and penalises constraint violation.
pub(crate) fn refine(prob: &Problem, seed: &VoltageState, eta: f64, goal: Goal, max_iter: usize) -> Option<(VoltageState, f64)> {
    let lay = Layout::new(prob, seed, eta, goal)?;
    let nx = lay.dim();
    if nx == 0 {
        return Some((seed.clone(), weighted_hc(prob.net, seed)));
    }
    let (lo, hi) = lay.bounds();
    let mut x = lay.to_vars(seed);
    let mut ev = lay.eval(&x)?;
    let scale = ev.grad.amax().max(1.0);
    let mut rho = 10.0 * scale;
    let quasi_newton = nx <= DENSE_LIMIT;
    let mut bmat = if quasi_newton {
        DMatrix::identity(nx, nx) * scale
    } else {
        lay.hessian(&x, &DVector::zeros(lay.constraints()))
    };
    let mut trust = TRUST_INIT;

    for _ in 0..max_iter {
        let dlo: Vec<f64> = (0..nx).map(|k| (lo[k] - x[k]).max(-trust)).collect();
        let dhi: Vec<f64> = (0..nx).map(|k| (hi[k] - x[k]).min(trust)).collect();
        let Some(step) = subproblem(&bmat, &ev, rho, &dlo, &dhi) else { break };
        let merit = ev.f + rho * violation(&ev.c);
        let pred = merit - step.model;
        if pred <= 1e-11 * merit.abs().max(1.0) {
            if violation(&ev.c) > 1e-12 && rho < 1e8 * scale {
                rho *= 10.0;
                continue;
            }
            break;
        }
        let lo_v = DVector::from_vec(lo.clone());
        let hi_v = DVector::from_vec(hi.clone());
        let clip = |d: &DVector<f64>| (&x + d).zip_zip_map(&lo_v, &hi_v, |v, l, h| v.clamp(l, h));
        let merit_at = |e: &Eval| e.f + rho * violation(&e.c);
        let mut trial = lay.eval(&clip(&step.d)).map(|e| (clip(&step.d), e));
        let accept = |t: &Option<(DVector<f64>, Eval)>| t.as_ref().map(|(_, e)| (merit - merit_at(e)) / pred);
        let mut ratio = accept(&trial).unwrap_or(f64::NEG_INFINITY);
        if ratio <= 0.1 {
            // second-order correction: re-linearise the constraints at the trial point
            if let Some((_, e)) = &trial {
                let shifted = Eval { f: ev.f, grad: ev.grad.clone(), c: &e.c - &ev.jac * &step.d, jac: ev.jac.clone() };
                if let Some(soc) = subproblem(&bmat, &shifted, rho, &dlo, &dhi) {
                    let alt = lay.eval(&clip(&soc.d)).map(|e| (clip(&soc.d), e));
                    let r = accept(&alt).unwrap_or(f64::NEG_INFINITY);
                    if r > 0.1 {
                        trial = alt;
                        ratio = r;
                    }
                }
            }
        }
        if ratio > 0.1 {
            let (x_new, ev_new) = trial.unwrap();
            let s = &x_new - &x;
            if quasi_newton {
                bfgs(&mut bmat, &s, &ev, &ev_new, &step.z);
            } else {
                bmat = lay.hessian(&x_new, &step.z);
            }
            let dmax = s.amax();
            x = x_new;
            ev = ev_new;
            if ratio > 0.75 && dmax >= 0.99 * trust {
                trust = (trust * 2.0).min(1.0);
            }
            if dmax < STEP_TOL && violation(&ev.c) <= 1e-12 {
                break;
            }
        } else {
            trust *= 0.25;
        }
        let zmax = step.z.amax();
        if zmax > 0.9 * rho {
            rho = 2.0 * zmax;
        }
        if trust < TRUST_MIN {
            break;
        }
    }
    Some((lay.to_state(&x), -ev.f - 1e3 * scale * violation(&ev.c)))
}
