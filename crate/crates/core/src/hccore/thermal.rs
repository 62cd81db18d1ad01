//! Thermal-limit repair.
//!
//! A limit C on a branch bounds |V_p − V_c| by D = C/|y|, which means
//! a² + b² − 2ab cos θ ≤ D². When the angle-stage solution violates a
//! limit, the tree search runs again with the limit enforced. Its
//! candidate magnitudes are then closed under the points where the
//! limit curve meets the constraint edges:
//!
//! - b ± D, the curve at θ = 0;
//! - b cos θ_m ± √(D² − b² sin² θ_m), the curve at the angle bound.
//!
//! Every point is clipped to the voltage box.

use crate::error::Result;
use crate::powerflow::VoltageState;

use super::pattern::base_candidates;
use super::search::tree_search;
use super::{branch_current, Construction, HCSolution, Problem, Stage};

const CLOSURE_ROUNDS: usize = 2;

fn curve_points(u: f64, d: f64, theta_m: f64) -> Vec<f64> {
    let mut out = vec![u - d, u + d];
    if theta_m > 0.0 {
        let (s, c) = theta_m.sin_cos();
        let disc = d * d - u * u * s * s;
        if disc >= 0.0 {
            let r = disc.sqrt();
            out.extend([u * c - r, u * c + r]);
        }
    }
    out
}

/// Keeps the first entry in place, then the remaining distinct values in
/// ascending order.
fn tidy(values: Vec<f64>) -> Vec<f64> {
    let Some((&first, rest)) = values.split_first() else { return values };
    let mut rest = rest.to_vec();
    rest.sort_by(f64::total_cmp);
    let mut out = vec![first];
    for v in rest {
        if out.iter().all(|w| (v - w).abs() > 1e-12) {
            out.push(v);
        }
    }
    out
}

pub(crate) fn candidate_sets(prob: &Problem) -> Vec<Vec<f64>> {
    if let Some(c) = &prob.ctx.candidates {
        return c.clone();
    }
    let (lo, hi) = (prob.c.v_min, prob.c.v_max);
    let theta_m = prob.c.theta_eff();
    let mut sets = base_candidates(prob);
    for _ in 0..CLOSURE_ROUNDS {
        let snapshot = sets.clone();
        for br in prob.net.branches() {
            let Some(limit) = br.thermal_limit else { continue };
            let d = limit / br.admittance().norm();
            for (src, dst) in [(br.from, br.to), (br.to, br.from)] {
                if prob.fixed(dst).is_some() {
                    continue;
                }
                for &u in &snapshot[src] {
                    sets[dst].extend(curve_points(u, d, theta_m).into_iter().map(|v| v.clamp(lo, hi)));
                }
            }
        }
        sets = sets.into_iter().map(tidy).collect();
    }
    sets
}

pub(crate) fn within_limits(prob: &Problem, state: &VoltageState) -> bool {
    prob.net.branches().iter().enumerate().all(|(k, br)| match br.thermal_limit {
        Some(c) => branch_current(prob.net, state, k).norm() <= c * (1.0 + 1e-9),
        None => true,
    })
}

pub(crate) fn adjust(prob: &Problem, sol: &HCSolution) -> Result<HCSolution> {
    if within_limits(prob, &sol.state) {
        return Ok(sol.clone());
    }
    let found = tree_search(prob, &candidate_sets(prob), true)?;
    let state = VoltageState { magnitudes: found.magnitudes, angles: found.angles };
    let out = HCSolution::from_state(prob.net, state, Stage::Thermal, Construction::TreeSearch)?;
    log::debug!("thermal repair: {:.12} -> {:.12}", sol.hc_total, out.hc_total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tidy_keeps_first_and_dedupes() {
        assert_eq!(tidy(vec![1.05, 0.95, 1.0, 0.95, 1.05 + 1e-14]), vec![1.05, 0.95, 1.0]);
    }

    #[test]
    fn curve_points_at_zero_angle() {
        assert_eq!(curve_points(1.0, 0.1, 0.0), vec![0.9, 1.1]);
    }

    #[test]
    fn curve_points_lie_on_the_limit() {
        let (u, d, t) = (1.0, 0.12, 0.1);
        for a in curve_points(u, d, t).into_iter().skip(2) {
            let dist = (a * a + u * u - 2.0 * a * u * t.cos()).sqrt();
            assert!((dist - d).abs() < 1e-12);
        }
    }
}
