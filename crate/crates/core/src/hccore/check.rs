//! Constraint checks on a voltage state.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netmodel::{BusKind, Network};
use crate::powerflow::{evaluate_injections, InjectionProfile, VoltageState};

use super::{branch_current, Binding, ConstraintSet, Problem, SolveContext};

const V_TOL: f64 = 1e-9;
const PF_TOL: f64 = 1e-9;
const BINDING_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    VoltageHigh { bus: i64, value: f64 },
    VoltageLow { bus: i64, value: f64 },
    Angle { from: i64, to: i64, value: f64 },
    Thermal { from: i64, to: i64, ratio: f64 },
    PowerFactor { bus: i64, pf: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VoltageHigh { bus, value } => write!(f, "bus {bus} voltage {value:.6} above v_max"),
            Violation::VoltageLow { bus, value } => write!(f, "bus {bus} voltage {value:.6} below v_min"),
            Violation::Angle { from, to, value } => write!(f, "branch {from}-{to} angle {value:.6} exceeds theta_max"),
            Violation::Thermal { from, to, ratio } => write!(f, "branch {from}-{to} current at {ratio:.6} of its limit"),
            Violation::PowerFactor { bus, pf } => write!(f, "bus {bus} power factor {pf:.6} below eta"),
        }
    }
}

/// Apparent power below which a bus counts as carrying no power, p.u.
pub const IDLE_POWER: f64 = 1e-9;

/// |P| / |S|, taken as 1 when the bus carries no power.
pub fn power_factor(p: f64, q: f64) -> f64 {
    let s = p.hypot(q);
    if s <= IDLE_POWER {
        1.0
    } else {
        p.abs() / s
    }
}

/// Angle difference wrapped into (−π, π].
pub(crate) fn wrap(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

pub(crate) fn violations(prob: &Problem, state: &VoltageState, inj: &InjectionProfile) -> Vec<Violation> {
    let net = prob.net;
    let c = prob.c;
    let id = |i: usize| net.buses()[i].id;
    let mut out = Vec::new();
    for i in 0..net.len() {
        if i == net.slack() {
            continue;
        }
        let v = state.magnitudes[i];
        if v > c.v_max + V_TOL {
            out.push(Violation::VoltageHigh { bus: id(i), value: v });
        }
        if v < c.v_min - V_TOL {
            out.push(Violation::VoltageLow { bus: id(i), value: v });
        }
    }
    for (k, br) in net.branches().iter().enumerate() {
        let d = wrap(state.angles[br.from] - state.angles[br.to]).abs();
        if d > c.theta_max + V_TOL {
            out.push(Violation::Angle { from: id(br.from), to: id(br.to), value: d });
        }
        if let Some(limit) = br.thermal_limit {
            let ratio = branch_current(net, state, k).norm() / limit;
            if ratio > 1.0 + 1e-9 {
                out.push(Violation::Thermal { from: id(br.from), to: id(br.to), ratio });
            }
        }
    }
    if let Some(eta) = c.eta {
        for i in 0..net.len() {
            if prob.pf_applies(i) {
                let pf = power_factor(inj.p[i], inj.q[i]);
                if pf < eta - PF_TOL {
                    out.push(Violation::PowerFactor { bus: id(i), pf });
                }
            }
        }
    }
    out
}

pub(crate) fn binding(prob: &Problem, state: &VoltageState, inj: &InjectionProfile) -> Vec<Binding> {
    let net = prob.net;
    let c = prob.c;
    let id = |i: usize| net.buses()[i].id;
    let mut out = Vec::new();
    for i in 0..net.len() {
        if prob.fixed(i).is_some() {
            continue;
        }
        let v = state.magnitudes[i];
        if c.v_max - v < BINDING_SLACK {
            out.push(Binding::VoltageMax { bus: id(i) });
        }
        if v - c.v_min < BINDING_SLACK {
            out.push(Binding::VoltageMin { bus: id(i) });
        }
    }
    for (k, br) in net.branches().iter().enumerate() {
        let (from, to) = (id(br.from), id(br.to));
        let d = wrap(state.angles[br.from] - state.angles[br.to]).abs();
        if c.theta_max > 0.0 && c.theta_max - d < BINDING_SLACK {
            out.push(Binding::Angle { from, to });
        }
        if let Some(limit) = br.thermal_limit {
            if limit - branch_current(net, state, k).norm() < BINDING_SLACK {
                out.push(Binding::Thermal { from, to });
            }
        }
    }
    if let Some(eta) = c.eta {
        for i in 0..net.len() {
            let (p, q) = (inj.p[i], inj.q[i]);
            if prob.pf_applies(i) && p.hypot(q) > IDLE_POWER && power_factor(p, q) - eta < BINDING_SLACK {
                out.push(Binding::PowerFactor { bus: id(i) });
            }
        }
    }
    out
}

/// Every constraint the state violates, for a standalone network.
pub fn verify(net: &Network, c: &ConstraintSet, state: &VoltageState) -> Result<Vec<Violation>> {
    let ctx = SolveContext::default();
    let prob = Problem::new(net, c, &ctx)?;
    let inj = evaluate_injections(net, state)?;
    Ok(violations(&prob, state, &inj))
}

/// max |I|/C over branches that carry a limit (0 when none do).
pub fn max_thermal_ratio(net: &Network, state: &VoltageState) -> f64 {
    net.branches()
        .iter()
        .enumerate()
        .filter_map(|(k, br)| br.thermal_limit.map(|c| branch_current(net, state, k).norm() / c))
        .fold(0.0, f64::max)
}

/// Smallest power factor over generator buses (1 when there are none).
pub fn min_generator_pf(net: &Network, inj: &InjectionProfile) -> f64 {
    net.buses()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BusKind::Generator)
        .map(|(i, _)| power_factor(inj.p[i], inj.q[i]))
        .fold(1.0, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_into_half_open_interval() {
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn power_factor_conventions() {
        assert_eq!(power_factor(0.0, 0.0), 1.0);
        assert!((power_factor(-0.3, 0.4) - 0.6).abs() < 1e-15);
        assert_eq!(power_factor(0.0, 0.2), 0.0);
    }
}
