//! Power-factor repair for generator buses.
//!
//! Step A clamps each offending bus's Q to its bound and moves that bus's
//! magnitude along the Q-V sensitivity. The update is damped by 0.5 and
//! the angles stay fixed, so the angle and thermal stages are not undone.
//! Step B walks a path from the stage-3 point back to a flat profile and
//! keeps the last point where every generator is compliant. The path
//! first scales the angles down, then pulls the magnitudes in.
//!
//! Those points, the repaired point itself, the stage-3 points of
//! tightened copies of the problem and (on small feeders) the corners of
//! the magnitude box seed a local solver over magnitudes and angles. The
//! best compliant result is then improved by reflecting single buses,
//! parent-child pairs and subtrees about the middle of the box.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::powerflow::{evaluate_injections, jacobian, VoltageState};

use super::check::{power_factor, violations};
use super::{nlp, pattern, thermal, weighted_hc, ConstraintSet, Construction, HCSolution, Problem, SolveContext, Stage};

const DAMPING: f64 = 0.5;
const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-12;
const SCAN_POINTS: usize = 129;
const BISECTIONS: usize = 60;
/// Larger problems skip the reflection search.
const FLIP_LIMIT: usize = 32;
/// Largest number of free buses for which every box corner seeds the
/// local solver.
const VERTEX_LIMIT: usize = 8;
/// Iterations of the screening run, and how many screened seeds are
/// solved to convergence.
const SCREEN_ITER: usize = 10;
const KEEP: usize = 16;
const STRICTER: [f64; 2] = [0.5, 1.0];
const LADDER: [f64; 4] = [0.75, 0.5, 0.25, 0.0];

/// Reactive-power interval allowed at active power `p` for floor `eta`.
pub fn pf_q_bounds(p: f64, eta: f64) -> (f64, f64) {
    let k = (1.0 - eta * eta).max(0.0).sqrt() / eta;
    let q = k * p.abs();
    (-q, q)
}

fn feasible(prob: &Problem, state: &VoltageState) -> bool {
    match evaluate_injections(prob.net, state) {
        Ok(inj) => violations(prob, state, &inj).is_empty(),
        Err(_) => false,
    }
}

fn sensitivity_step(prob: &Problem, state: &VoltageState, eta: f64) -> Option<VoltageState> {
    let n = prob.net.len();
    let k = (1.0 - eta * eta).max(0.0).sqrt() / eta;
    let mut state = state.clone();
    let mut clamped: Vec<Option<f64>> = vec![None; n];
    for _ in 0..MAX_ITER {
        let inj = evaluate_injections(prob.net, &state).ok()?;
        for i in 0..n {
            if clamped[i].is_none() && prob.pf_applies(i) && power_factor(inj.p[i], inj.q[i]) < eta - 1e-9 {
                clamped[i] = Some(if inj.q[i] >= 0.0 { 1.0 } else { -1.0 });
            }
        }
        let set: Vec<usize> = (0..n).filter(|&i| clamped[i].is_some()).collect();
        if set.is_empty() {
            break;
        }
        let jac = jacobian(prob.net, &state, &inj);
        let m = set.len();
        // residual Q* − Q with Q* = s k |P| on the bound the bus crossed
        let resid = DVector::from_fn(m, |r, _| {
            let i = set[r];
            clamped[i].unwrap() * k * inj.p[i].abs() - inj.q[i]
        });
        let sens = DMatrix::from_fn(m, m, |r, c| {
            let (i, j) = (set[r], set[c]);
            let s = clamped[i].unwrap();
            jac.dq_da[(i, j)] - s * k * inj.p[i].signum() * jac.dp_da[(i, j)]
        });
        let step = sens.lu().solve(&resid)?;
        let mut moved: f64 = 0.0;
        for (r, &i) in set.iter().enumerate() {
            let old = state.magnitudes[i];
            let new = (old + DAMPING * step[r]).clamp(prob.c.v_min, prob.c.v_max);
            if !new.is_finite() {
                return None;
            }
            moved = moved.max((new - old).abs());
            state.magnitudes[i] = new;
        }
        if moved < STEP_TOL {
            break;
        }
    }
    feasible(prob, &state).then_some(state)
}

/// Stage-3 points of tightened copies of the problem, and the compliant
/// points the local solver reaches from them inside each copy. All are
/// feasible for the original limits and may lie in better basins than
/// the unrestricted optimum does.
fn ladder_seeds(prob: &Problem, eta: f64) -> Vec<VoltageState> {
    let c = prob.c;
    let ctx = SolveContext { candidates: None, ..prob.ctx.clone() };
    let mut variants: Vec<(Option<Network>, ConstraintSet)> = Vec::new();
    for f in LADDER {
        let mut cf = c.clone();
        cf.theta_max = c.theta_eff() * f;
        variants.push((None, cf));
        let mut cf = c.clone();
        cf.v_max = c.v_min + f * (c.v_max - c.v_min);
        variants.push((None, cf));
        if prob.net.branches().iter().any(|b| b.thermal_limit.is_some()) {
            let net = prob.net.map_branches(|_, br| br.thermal_limit = br.thermal_limit.map(|l| l * f)).ok();
            variants.push((net, c.clone()));
        }
    }
    variants
        .par_iter()
        .flat_map_iter(|(net, cf)| {
            let net = net.as_ref().unwrap_or(prob.net);
            let Ok(p) = Problem::new(net, cf, &ctx) else { return Vec::new() };
            let stage = if cf.theta_max == 0.0 { Stage::VoltageOnly } else { Stage::Angle };
            let Some(s3) = pattern::solve(&p, stage).and_then(|s1| thermal::adjust(&p, &s1)).ok() else {
                return Vec::new();
            };
            // the variant's own compliant point is compliant here as well
            let own = polish(&p, &s3.state, eta);
            std::iter::once(s3.state).chain(own).collect()
        })
        .collect()
}

/// Compliant points for stricter floors, which are compliant here too.
fn stricter_seeds(prob: &Problem, base: &VoltageState, eta: f64) -> Vec<VoltageState> {
    STRICTER
        .iter()
        .map(|f| eta + f * (1.0 - eta))
        .filter(|&e| e > eta)
        .filter_map(|e| {
            let c = ConstraintSet { eta: Some(e), ..prob.c.clone() };
            let p = Problem::new(prob.net, &c, prob.ctx).ok()?;
            polish(&p, base, e)
        })
        .collect()
}

/// Every corner of the magnitude box, with the angles of `base`, when
/// there are few enough free buses. On the smallest feeders the branch
/// angle differences also take both ends of their range.
fn vertex_seeds(prob: &Problem, base: &VoltageState) -> Vec<VoltageState> {
    let free: Vec<usize> = (0..prob.net.len()).filter(|&i| prob.fixed(i).is_none()).collect();
    if free.len() > VERTEX_LIMIT {
        return Vec::new();
    }
    let tree = &prob.tree;
    let edges: Vec<usize> = tree.order.iter().copied().filter(|&i| tree.parent[i].is_some()).collect();
    let t = prob.c.theta_eff();
    let angle_bits = if t > 0.0 && free.len() + edges.len() <= VERTEX_LIMIT { edges.len() } else { 0 };
    let mut out = Vec::new();
    for mask in 0..1usize << free.len() {
        let mut s = base.clone();
        for (bit, &i) in free.iter().enumerate() {
            s.magnitudes[i] = if mask >> bit & 1 == 1 { prob.c.v_max } else { prob.c.v_min };
        }
        if angle_bits > 0 {
            for signs in 0..1usize << angle_bits {
                let mut s = s.clone();
                for (bit, &c) in edges.iter().enumerate() {
                    let delta = if signs >> bit & 1 == 1 { t } else { -t };
                    s.angles[c] = s.angles[tree.parent[c].unwrap()] - delta;
                }
                out.push(s);
            }
        }
        out.push(s);
    }
    out
}

/// Local solve from `seed`, falling back to the last compliant point on
/// the path towards the local solution.
fn polish(prob: &Problem, seed: &VoltageState, eta: f64) -> Option<VoltageState> {
    let state = nlp::refine(prob, seed, eta, nlp::Goal::Maximise, nlp::MAX_ITER)?.0;
    if feasible(prob, &state) {
        Some(state)
    } else {
        homotopy(prob, &state)
    }
}

/// Reflects one free magnitude, a parent and child together, or a whole
/// subtree about the middle of the box and solves again, keeping any improvement,
/// until no such move helps.
fn flip_search(prob: &Problem, mut hc: f64, mut state: VoltageState, eta: f64, ceiling: f64) -> (f64, VoltageState) {
    let free: Vec<usize> = (0..prob.net.len()).filter(|&i| prob.fixed(i).is_none()).collect();
    if free.len() > FLIP_LIMIT {
        return (hc, state);
    }
    let mut moves: Vec<Vec<usize>> = free.iter().map(|&i| vec![i]).collect();
    for &i in &free {
        if let Some(p) = prob.tree.parent[i].filter(|&p| prob.fixed(p).is_none()) {
            moves.push(vec![p, i]);
        }
    }
    // whole subtrees, including every child subtree of the root
    for &i in &prob.tree.order {
        let mut sub = vec![];
        let mut stack = vec![i];
        while let Some(j) = stack.pop() {
            if prob.fixed(j).is_none() {
                sub.push(j);
            }
            stack.extend(prob.tree.children[j].iter().copied());
        }
        if sub.len() > 2 {
            moves.push(sub);
        }
    }
    let (lo, hi) = (prob.c.v_min, prob.c.v_max);
    loop {
        let tries: Vec<(f64, VoltageState)> = moves
            .par_iter()
            .filter_map(|mv| {
                let mut seed = state.clone();
                for &i in mv {
                    seed.magnitudes[i] = lo + hi - seed.magnitudes[i];
                }
                let next = polish(prob, &seed, eta)?;
                let value = weighted_hc(prob.net, &next);
                (value <= ceiling).then_some((value, next))
            })
            .collect();
        // first best move in list order keeps the result independent of scheduling
        let mut pick: Option<(f64, VoltageState)> = None;
        for (value, next) in tries {
            if value > hc + 1e-12 * hc.abs().max(1.0) && pick.as_ref().is_none_or(|p| value > p.0) {
                pick = Some((value, next));
            }
        }
        match pick {
            Some((value, next)) => {
                hc = value;
                state = next;
            }
            None => break,
        }
    }
    (hc, state)
}

fn path_point(prob: &Problem, target: &VoltageState, s: f64) -> VoltageState {
    if s >= 1.0 {
        let tau = s - 1.0;
        return VoltageState {
            magnitudes: target.magnitudes.clone(),
            angles: target.angles.iter().map(|t| t * tau).collect(),
        };
    }
    let slack = prob.net.slack();
    let c0 = prob.net.buses()[slack].v_set.clamp(prob.c.v_min, prob.c.v_max);
    let magnitudes = (0..prob.net.len())
        .map(|i| match prob.fixed(i) {
            Some(v) => v,
            None => c0 + s * (target.magnitudes[i] - c0),
        })
        .collect();
    VoltageState::real(magnitudes)
}

fn homotopy(prob: &Problem, target: &VoltageState) -> Option<VoltageState> {
    let ok = |s: f64| feasible(prob, &path_point(prob, target, s));
    let h = 2.0 / (SCAN_POINTS - 1) as f64;
    let top = (0..SCAN_POINTS).rev().find(|&j| ok(j as f64 * h))?;
    let mut lo = top as f64 * h;
    if top + 1 < SCAN_POINTS {
        let mut hi = lo + h;
        for _ in 0..BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Some(path_point(prob, target, lo))
}

pub(crate) fn adjust(prob: &Problem, sol: &HCSolution) -> Result<HCSolution> {
    let Some(eta) = prob.c.eta else { return Ok(sol.clone()) };
    let offending: Vec<usize> = (0..prob.net.len())
        .filter(|&i| prob.pf_applies(i) && power_factor(sol.injections.p[i], sol.injections.q[i]) < eta - 1e-9)
        .collect();
    if offending.is_empty() {
        return Ok(sol.clone());
    }
    log::debug!("power-factor repair for {} bus(es)", offending.len());

    // a compliant point that keeps the stage-3 value is optimal
    let restored = nlp::refine(prob, &sol.state, eta, nlp::Goal::Restore(sol.hc_total), nlp::MAX_ITER).map(|r| r.0);
    let kept = |s: &VoltageState| weighted_hc(prob.net, s) >= sol.hc_total - 1e-9 * sol.hc_total.abs().max(1.0);
    if let Some(state) = restored.as_ref().filter(|s| kept(s) && feasible(prob, s)) {
        log::debug!("power-factor limits met at the stage-3 value");
        return HCSolution::from_state(prob.net, state.clone(), Stage::PowerFactor, Construction::Repaired);
    }
    let mut candidates: Vec<VoltageState> =
        [sensitivity_step(prob, &sol.state, eta), homotopy(prob, &sol.state)].into_iter().flatten().collect();
    let mut seeds = vec![sol.state.clone()];
    seeds.extend(restored);
    seeds.extend(candidates.iter().cloned());
    seeds.extend(ladder_seeds(prob, eta));
    seeds.extend(stricter_seeds(prob, &sol.state, eta));
    candidates.extend(seeds.par_iter().filter_map(|seed| polish(prob, seed, eta)).collect::<Vec<_>>());
    // box corners: a short run from each, then full runs from the best few
    let corners = vertex_seeds(prob, &sol.state);
    let mut screened: Vec<(f64, VoltageState)> =
        corners.par_iter().filter_map(|seed| nlp::refine(prob, seed, eta, nlp::Goal::Maximise, SCREEN_ITER).map(|(s, v)| (v, s))).collect();
    screened.sort_by(|a, b| b.0.total_cmp(&a.0));
    screened.truncate(KEEP);
    candidates.extend(screened.par_iter().filter_map(|(_, seed)| polish(prob, seed, eta)).collect::<Vec<_>>());

    let ceiling = sol.hc_total + 1e-12 * sol.hc_total.abs().max(1.0);
    let mut best: Option<(f64, VoltageState)> = None;
    for state in candidates {
        let hc = weighted_hc(prob.net, &state);
        if hc <= ceiling && best.as_ref().is_none_or(|b| hc > b.0) {
            best = Some((hc, state));
        }
    }
    if let Some((hc, state)) = best.take() {
        best = Some(flip_search(prob, hc, state, eta, ceiling));
    }
    let best = best.map(|(_, state)| HCSolution::from_state(prob.net, state, Stage::PowerFactor, Construction::Repaired)).transpose()?;
    best.ok_or_else(|| {
        let ids: Vec<String> = offending.iter().map(|&i| prob.net.buses()[i].id.to_string()).collect();
        Error::PowerFactorInfeasible(format!("no compliant operating point for bus(es) {}", ids.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_bounds() {
        let (lo, hi) = pf_q_bounds(1.0, 0.95);
        assert!((hi - 0.3287).abs() < 1e-4);
        assert_eq!(lo, -hi);
        assert_eq!(pf_q_bounds(0.7, 1.0), (-0.0, 0.0));
        assert_eq!(pf_q_bounds(0.0, 0.9), (-0.0, 0.0));
        let (_, hi) = pf_q_bounds(-2.0, 0.95);
        assert!((hi - 2.0 * 0.3287).abs() < 2e-4);
    }
}
