//! Brute-force reference solutions.
//!
//! [`grid_search_hc`] maximises the weighted objective over a uniform grid
//! of magnitudes and branch angle differences. It shares no code with the
//! constructive solver: branch flows are summed here directly. Small grids
//! are enumerated point by point. Larger ones are searched exactly by
//! dynamic programming over the tree, which is valid because every
//! constraint except the power-factor floor involves one bus or one branch.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hccore::{weighted_hc, ConstraintSet, Violation};
use crate::netmodel::{BusKind, Network, RadialTree};
use crate::powerflow::{evaluate_injections, solve_newton, BusSpec, InjectionProfile, NewtonOptions, VoltageState};

const FEAS_TOL: f64 = 1e-9;
const DEFAULT_CAP: u64 = 100_000_000;
/// Screening gives up on a bus after this many increments.
const SCREEN_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Enumerate when the grid fits the cap, otherwise use the tree search.
    Auto,
    Exhaustive,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per free magnitude, box ends included.
    pub magnitude_steps: usize,
    /// Points per branch angle difference on [−θ_max, θ_max].
    pub angle_steps: usize,
    /// Largest grid enumerated point by point.
    pub cap: u64,
    pub mode: GridMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { magnitude_steps: 101, angle_steps: 21, cap: DEFAULT_CAP, mode: GridMode::Auto }
    }
}

impl GridSpec {
    pub fn new(magnitude_steps: usize, angle_steps: usize) -> GridSpec {
        GridSpec { magnitude_steps, angle_steps, ..GridSpec::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.magnitude_steps < 2 || self.angle_steps < 2 {
            return Err(Error::InvalidConstraints("grid needs at least 2 steps per axis".into()));
        }
        Ok(())
    }
}

/// Best grid point and the resolution bound that goes with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub state: VoltageState,
    pub injections: InjectionProfile,
    pub hc_total: f64,
    /// Number of grid points the search covered.
    pub points: f64,
    /// Largest amount by which the continuous optimum can exceed the grid one.
    pub eps_grid: f64,
    pub exhaustive: bool,
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let h = (hi - lo) / (steps - 1) as f64;
    (0..steps).map(|k| if k + 1 == steps { hi } else { lo + h * k as f64 }).collect()
}

/// Search space and per-branch data, laid out along the tree.
struct Grid<'a> {
    net: &'a Network,
    c: &'a ConstraintSet,
    tree: RadialTree,
    /// Magnitude values per bus (one value for the slack).
    mags: Vec<Vec<f64>>,
    /// Angle difference θ_parent − θ_child values per branch.
    angles: Vec<f64>,
    /// Non-root buses in BFS order; each owns the branch to its parent.
    edges: Vec<usize>,
    pf_buses: Vec<usize>,
}

impl<'a> Grid<'a> {
    fn new(net: &'a Network, c: &'a ConstraintSet, g: &GridSpec) -> Result<Grid<'a>> {
        c.validate()?;
        g.validate()?;
        let tree = net.radial_tree()?;
        let slack = net.slack();
        let mags = (0..net.len())
            .map(|i| if i == slack { vec![net.buses()[i].v_set] } else { linspace(c.v_min, c.v_max, g.magnitude_steps) })
            .collect();
        let t = c.theta_eff();
        let angles = if t > 0.0 { linspace(-t, t, g.angle_steps) } else { vec![0.0] };
        let edges = tree.order.iter().copied().filter(|&i| tree.parent[i].is_some()).collect();
        let pf_buses = match c.eta {
            Some(_) => (0..net.len()).filter(|&i| i != slack && net.buses()[i].kind == BusKind::Generator).collect(),
            None => Vec::new(),
        };
        Ok(Grid { net, c, tree, mags, angles, edges, pf_buses })
    }

    fn points(&self) -> f64 {
        let m: f64 = self.mags.iter().map(|m| m.len() as f64).product();
        m * (self.angles.len() as f64).powi(self.edges.len() as i32)
    }

    /// Complex power leaving each end of the branch above `child`:
    /// `S_pc = V_p conj(y (V_p − V_c))` and the mirror image.
    fn flows(&self, child: usize, vp: Complex64, vc: Complex64) -> (Complex64, Complex64, f64) {
        let br = &self.net.branches()[self.tree.parent_branch[child].unwrap()];
        let y = br.admittance();
        let i = y * (vp - vc);
        (vp * i.conj(), -vc * i.conj(), i.norm())
    }

    fn thermal_ok(&self, child: usize, current: f64) -> bool {
        let br = &self.net.branches()[self.tree.parent_branch[child].unwrap()];
        br.thermal_limit.is_none_or(|c| current <= c * (1.0 + FEAS_TOL))
    }

    /// λ-weighted active power of one branch, or `None` if over its limit.
    fn edge_value(&self, child: usize, a: f64, b: f64, delta: f64) -> Option<f64> {
        let p = self.tree.parent[child].unwrap();
        let buses = self.net.buses();
        let (s_pc, s_cp, cur) = self.flows(child, Complex64::from_polar(a, delta), Complex64::new(b, 0.0));
        self.thermal_ok(child, cur).then(|| buses[p].lambda * s_pc.re + buses[child].lambda * s_cp.re)
    }

    fn node_value(&self, i: usize, a: f64) -> f64 {
        let b = &self.net.buses()[i];
        b.lambda * b.shunt.re * a * a
    }

    fn state(&self, mag_idx: &[usize], ang_idx: &[usize]) -> VoltageState {
        let n = self.net.len();
        let magnitudes: Vec<f64> = (0..n).map(|i| self.mags[i][mag_idx[i]]).collect();
        let mut angles = vec![0.0; n];
        for (e, &c) in self.edges.iter().enumerate() {
            angles[c] = angles[self.tree.parent[c].unwrap()] - self.angles[ang_idx[e]];
        }
        VoltageState { magnitudes, angles }
    }

    /// Objective at a full grid point, `None` when a constraint fails.
    fn evaluate(&self, state: &VoltageState) -> Option<f64> {
        let n = self.net.len();
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(state.magnitudes[i], state.angles[i])).collect();
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        for &c in &self.edges {
            let p = self.tree.parent[c].unwrap();
            let (s_pc, s_cp, cur) = self.flows(c, v[p], v[c]);
            if !self.thermal_ok(c, cur) {
                return None;
            }
            s[p] += s_pc;
            s[c] += s_cp;
        }
        for (i, b) in self.net.buses().iter().enumerate() {
            s[i] += v[i] * (b.shunt * v[i]).conj();
        }
        if let Some(eta) = self.c.eta {
            for &i in &self.pf_buses {
                let mag = s[i].norm();
                if mag > 1e-12 && s[i].re.abs() / mag < eta - FEAS_TOL {
                    return None;
                }
            }
        }
        Some(self.net.buses().iter().zip(&s).map(|(b, s)| b.lambda * s.re).sum())
    }

    fn exhaustive(&self) -> Option<(VoltageState, f64)> {
        let n = self.net.len();
        let radices: Vec<usize> = (0..n).map(|i| self.mags[i].len()).chain(self.edges.iter().map(|_| self.angles.len())).collect();
        let total: u64 = radices.iter().map(|&r| r as u64).product();
        let decode = |mut k: u64| {
            let mut digits = vec![0usize; radices.len()];
            for (d, &r) in digits.iter_mut().zip(&radices).rev() {
                *d = (k % r as u64) as usize;
                k /= r as u64;
            }
            digits
        };
        // Maximum with ties going to the lowest index, which is the
        // lexicographically smallest voltage vector.
        let best = (0..total)
            .into_par_iter()
            .filter_map(|k| {
                let d = decode(k);
                self.evaluate(&self.state(&d[..n], &d[n..])).map(|v| (v, k))
            })
            .reduce_with(|x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x })?;
        let d = decode(best.1);
        Some((self.state(&d[..n], &d[n..]), best.0))
    }

    /// Exact grid maximum by dynamic programming over the tree.
    fn tree_search(&self) -> Option<(VoltageState, f64)> {
        let n = self.net.len();
        // value[i][k]: best objective of the subtree at i with magnitude index k.
        let mut value: Vec<Vec<f64>> = (0..n).map(|i| self.mags[i].iter().map(|&a| self.node_value(i, a)).collect()).collect();
        // choice[c][k_parent] = (child magnitude index, angle index).
        let mut choice: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for &c in self.edges.iter().rev() {
            let p = self.tree.parent[c].unwrap();
            let mut best_for_parent = Vec::with_capacity(self.mags[p].len());
            for (kp, &a) in self.mags[p].iter().enumerate() {
                let mut best = (f64::NEG_INFINITY, (0, 0));
                for (kc, &b) in self.mags[c].iter().enumerate() {
                    let sub = value[c][kc];
                    if sub == f64::NEG_INFINITY {
                        continue;
                    }
                    for (ka, &d) in self.angles.iter().enumerate() {
                        if let Some(e) = self.edge_value(c, a, b, d) {
                            if e + sub > best.0 {
                                best = (e + sub, (kc, ka));
                            }
                        }
                    }
                }
                value[p][kp] += best.0;
                best_for_parent.push(best.1);
            }
            choice[c] = best_for_parent;
        }
        let root = self.tree.root;
        let total = value[root][0];
        if total == f64::NEG_INFINITY {
            return None;
        }
        let mut mag_idx = vec![0; n];
        let mut ang_idx = vec![0; self.edges.len()];
        for (e, &c) in self.edges.iter().enumerate() {
            let p = self.tree.parent[c].unwrap();
            let (kc, ka) = choice[c][mag_idx[p]];
            mag_idx[c] = kc;
            ang_idx[e] = ka;
        }
        Some((self.state(&mag_idx, &ang_idx), total))
    }

    /// Resolution bound ε = Σ_j L_j h_j.
    ///
    /// The branch term `g a² − a b (g cos δ + β sin δ)`, with y = g + jβ and
    /// δ the angle difference, has |∂/∂a| ≤ (2|g| + |y|) V, |∂/∂b| ≤ |y| V
    /// and |∂/∂δ| ≤ |y| V², where V bounds every magnitude. A shunt term
    /// `g_sh a²` has |∂/∂a| ≤ 2|g_sh| V. Each bound is scaled by the weight
    /// of the bus the term belongs to. Any feasible point lies within one
    /// grid spacing h_j of a grid point in every coordinate.
    fn eps(&self) -> f64 {
        let buses = self.net.buses();
        let v = self.mags.iter().flatten().fold(0.0f64, |m, &a| m.max(a));
        let n = self.net.len();
        let mut l_mag = vec![0.0; n];
        let mut l_ang = 0.0;
        for &c in &self.edges {
            let p = self.tree.parent[c].unwrap();
            let y = self.net.branches()[self.tree.parent_branch[c].unwrap()].admittance();
            let (g, ym) = (y.re.abs(), y.norm());
            for (own, other) in [(p, c), (c, p)] {
                l_mag[own] += buses[own].lambda * (2.0 * g + ym) * v;
                l_mag[other] += buses[own].lambda * ym * v;
            }
            l_ang += (buses[p].lambda + buses[c].lambda) * ym * v * v;
        }
        for (i, b) in buses.iter().enumerate() {
            l_mag[i] += b.lambda * 2.0 * b.shunt.re.abs() * v;
        }
        let spacing = |vals: &[f64]| if vals.len() > 1 { vals[1] - vals[0] } else { 0.0 };
        let mag_term: f64 = (0..n).map(|i| l_mag[i] * spacing(&self.mags[i])).sum();
        mag_term + l_ang * spacing(&self.angles)
    }
}

/// Resolution bound of [`grid_search_hc`] for this network and grid.
pub fn eps_grid(net: &Network, c: &ConstraintSet, g: &GridSpec) -> Result<f64> {
    Ok(Grid::new(net, c, g)?.eps())
}

/// Best feasible grid point of the weighted objective.
pub fn grid_search_hc(net: &Network, c: &ConstraintSet, g: &GridSpec) -> Result<GridOptimum> {
    let grid = Grid::new(net, c, g)?;
    let points = grid.points();
    let fits = points <= g.cap as f64;
    let exhaustive = match g.mode {
        GridMode::Exhaustive if !fits => return Err(Error::GridCapExceeded { points, cap: g.cap }),
        GridMode::Exhaustive => true,
        GridMode::Tree => false,
        GridMode::Auto => fits,
    };
    if !exhaustive && !grid.pf_buses.is_empty() {
        // The power-factor floor couples every branch at a bus, so only
        // enumeration can enforce it.
        return Err(Error::GridCapExceeded { points, cap: g.cap });
    }
    let found = if exhaustive { grid.exhaustive() } else { grid.tree_search() };
    let (state, _) = found.ok_or_else(|| Error::Verification("no feasible grid point".into()))?;
    let injections = evaluate_injections(net, &state)?;
    let hc_total = weighted_hc(net, &state);
    Ok(GridOptimum { state, injections, hc_total, points, eps_grid: grid.eps(), exhaustive })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub v1: f64,
    pub v2: f64,
    pub p1: f64,
    pub p2: f64,
    /// Weighted objective Σ λ_i P_i.
    pub p_sum: f64,
    pub feasible: bool,
}

/// Objective over the magnitudes of the two free buses, at zero angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    /// Case-file ids of the two free buses.
    pub buses: [i64; 2],
    pub rows: Vec<SurfaceRow>,
    /// Index of the best feasible row.
    pub maximizer: Option<usize>,
}

impl Surface {
    pub fn best(&self) -> Option<&SurfaceRow> {
        self.maximizer.map(|k| &self.rows[k])
    }
}

/// Samples the objective on the magnitude grid of a two-free-bus network.
/// Rows run over `v1` in the outer loop and `v2` in the inner one.
pub fn pv_curve_surface(net: &Network, c: &ConstraintSet, g: &GridSpec) -> Result<Surface> {
    let free = net.free_buses();
    if free.len() != 2 {
        return Err(Error::FreeBusCount(free.len()));
    }
    let real = ConstraintSet { theta_max: 0.0, ..c.clone() };
    let grid = Grid::new(net, &real, g)?;
    let (b1, b2) = (free[0], free[1]);
    let mut rows = Vec::new();
    let mut maximizer: Option<usize> = None;
    for &v1 in &grid.mags[b1] {
        for &v2 in &grid.mags[b2] {
            let mut mags: Vec<f64> = (0..net.len()).map(|i| grid.mags[i][0]).collect();
            mags[b1] = v1;
            mags[b2] = v2;
            let state = VoltageState::real(mags);
            let inj = evaluate_injections(net, &state)?;
            let p_sum = net.buses().iter().zip(&inj.p).map(|(b, p)| b.lambda * p).sum();
            let feasible = grid.evaluate(&state).is_some();
            if feasible && maximizer.is_none_or(|k| p_sum > rows.get(k).map_or(f64::NEG_INFINITY, |r: &SurfaceRow| r.p_sum)) {
                maximizer = Some(rows.len());
            }
            rows.push(SurfaceRow { v1, v2, p1: inj.p[b1], p2: inj.p[b2], p_sum, feasible });
        }
    }
    let ids = net.buses();
    Ok(Surface { buses: [ids[b1].id, ids[b2].id], rows, maximizer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScreeningStatus {
    /// Stopped by this constraint one step past the recorded size.
    Violated { violation: Violation },
    /// The base case (no added generation) already breaks a constraint.
    BaseViolated { violation: Violation },
    /// Power flow stopped converging before any constraint was hit.
    Diverged,
    /// Ran out of steps.
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub bus: i64,
    /// Largest generation added at this bus without a violation, p.u.
    pub added: f64,
    /// Weighted objective Σ λ_i P_i at that operating point.
    pub hc_total: f64,
    pub steps: usize,
    #[serde(flatten)]
    pub status: ScreeningStatus,
}

/// Grows a unity-power-factor generator at one bus at a time on top of
/// the case loads until a constraint breaks.
pub fn incremental_screening(net: &Network, c: &ConstraintSet, step: f64) -> Result<Vec<ScreeningRow>> {
    c.validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConstraints("screening step must be positive".into()));
    }
    let slack = net.slack();
    let base: Vec<BusSpec> = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| if i == slack { BusSpec::Slack { v: b.v_set, theta: 0.0 } } else { BusSpec::Pq { p: -b.load_p, q: -b.load_q } })
        .collect();
    let candidates: Vec<usize> = (0..net.len()).filter(|&i| i != slack && net.buses()[i].kind == BusKind::Generator).collect();
    candidates.par_iter().map(|&bus| screen_bus(net, c, &base, bus, step)).collect()
}

fn screen_bus(net: &Network, c: &ConstraintSet, base: &[BusSpec], bus: usize, step: f64) -> Result<ScreeningRow> {
    let id = net.buses()[bus].id;
    let load = net.buses()[bus].load_p;
    let q = -net.buses()[bus].load_q;
    let mut spec = base.to_vec();
    let mut opts = NewtonOptions::default();
    let row = |added: f64, hc_total: f64, steps: usize, status: ScreeningStatus| ScreeningRow { bus: id, added, hc_total, steps, status };

    let Ok(state) = solve_newton(net, &spec, &opts) else {
        return Ok(row(0.0, 0.0, 0, ScreeningStatus::Diverged));
    };
    if let Some(v) = crate::hccore::verify(net, c, &state)?.into_iter().next() {
        return Ok(row(0.0, 0.0, 0, ScreeningStatus::BaseViolated { violation: v }));
    }
    let mut last = (0.0, weighted_hc(net, &state));
    opts.init = Some(state);
    for k in 1..=SCREEN_MAX_STEPS {
        let added = step * k as f64;
        spec[bus] = BusSpec::Pq { p: added - load, q };
        let Ok(state) = solve_newton(net, &spec, &opts) else {
            return Ok(row(last.0, last.1, k - 1, ScreeningStatus::Diverged));
        };
        if let Some(v) = crate::hccore::verify(net, c, &state)?.into_iter().next() {
            return Ok(row(last.0, last.1, k - 1, ScreeningStatus::Violated { violation: v }));
        }
        last = (added, weighted_hc(net, &state));
        opts.init = Some(state);
    }
    Ok(row(last.0, last.1, SCREEN_MAX_STEPS, ScreeningStatus::StepLimit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_both_ends() {
        let v = linspace(0.95, 1.05, 3);
        assert_eq!(v, vec![0.95, 1.0, 1.05]);
        assert_eq!(linspace(1.0, 1.0, 5), vec![1.0]);
    }
}
