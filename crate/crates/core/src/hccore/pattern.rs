//! The closed-form voltage pattern. Odd-depth buses sit at `v_max` and
//! even-depth buses at `v_min`. Above the critical angle every bus sits
//! at `v_max`. Branch angles alternate so that every branch reaches the
//! angle bound.

use crate::error::Result;
use crate::netmodel::Parity;
use crate::powerflow::VoltageState;

use super::search::{tree_search, EdgeTerm};
use super::{critical_angle, Construction, HCSolution, Problem, Stage};

pub(crate) fn all_high(prob: &Problem) -> bool {
    prob.c.theta_eff() > critical_angle(prob.c.v_max, prob.c.v_min)
}

pub(crate) fn magnitude(prob: &Problem, i: usize) -> f64 {
    if let Some(v) = prob.fixed(i) {
        return v;
    }
    match (all_high(prob), prob.parity(i)) {
        (true, _) | (false, Parity::Odd) => prob.c.v_max,
        (false, Parity::Even) => prob.c.v_min,
    }
}

pub(crate) fn state(prob: &Problem) -> VoltageState {
    let n = prob.net.len();
    let theta_m = prob.c.theta_eff();
    let mut magnitudes = vec![0.0; n];
    let mut angles = vec![0.0; n];
    for &i in &prob.tree.order {
        magnitudes[i] = magnitude(prob, i);
        if let Some(p) = prob.tree.parent[i] {
            let sign = EdgeTerm::of(prob, i, false).sign;
            angles[i] = angles[p] - sign * theta_m;
        }
    }
    VoltageState { magnitudes, angles }
}

/// `{pattern value, the other box end}` for decision buses, the fixed
/// value otherwise.
pub(crate) fn base_candidates(prob: &Problem) -> Vec<Vec<f64>> {
    (0..prob.net.len())
        .map(|i| {
            let first = magnitude(prob, i);
            if prob.fixed(i).is_some() {
                return vec![first];
            }
            let other = if first == prob.c.v_max { prob.c.v_min } else { prob.c.v_max };
            if other == first {
                vec![first]
            } else {
                vec![first, other]
            }
        })
        .collect()
}

/// The pattern, unless the exact search on the box corners finds a
/// strictly better assignment (possible with unequal weights).
pub(crate) fn solve(prob: &Problem, stage: Stage) -> Result<HCSolution> {
    let pattern = HCSolution::from_state(prob.net, state(prob), stage, Construction::Pattern)?;
    let found = tree_search(prob, &base_candidates(prob), false)?;
    let tol = 1e-12 * found.value.abs().max(pattern.hc_total.abs()).max(1.0);
    if pattern.hc_total >= found.value - tol {
        return Ok(pattern);
    }
    log::debug!(
        "{} pattern gives {:.12}, tree search {:.12}; using tree search",
        stage.label(),
        pattern.hc_total,
        found.value
    );
    let state = VoltageState { magnitudes: found.magnitudes, angles: found.angles };
    HCSolution::from_state(prob.net, state, stage, Construction::TreeSearch)
}
