//! Hosting-capacity construction.
//!
//! The pipeline runs in stages. It builds the voltage-magnitude pattern
//! (odd depth at `v_max`, even depth at `v_min`), then the angle pattern,
//! then repairs thermal limits and finally power factors. Each stage
//! returns an [`HCSolution`], and [`solve_hc`] chains them.
//!
//! On a tree the objective splits into one term per branch plus one per
//! shunt. For fixed magnitudes, every branch angle can be chosen on its
//! own. Each stage's closed-form pattern is cross-checked by an exact
//! search over candidate magnitudes on the tree (see `search`). That
//! search takes over when the pattern is not optimal, which happens with
//! unequal weights or with thermal limits.

mod check;
mod nlp;
mod pattern;
mod pf;
mod search;
mod thermal;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, CaseConstraints, Network, Parity, RadialTree};
use crate::powerflow::{evaluate_injections, InjectionProfile, VoltageState};

pub use check::{max_thermal_ratio, min_generator_pf, power_factor, verify, Violation};
pub use pf::pf_q_bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub v_min: f64,
    pub v_max: f64,
    /// Bound on |θ_i − θ_k| across every branch, rad.
    pub theta_max: f64,
    /// Power-factor floor for generator buses; `None` disables the check.
    pub eta: Option<f64>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet { v_min: 0.95, v_max: 1.05, theta_max: 0.0, eta: None }
    }
}

impl ConstraintSet {
    pub fn new(v_min: f64, v_max: f64, theta_max: f64, eta: Option<f64>) -> Result<ConstraintSet> {
        let c = ConstraintSet { v_min, v_max, theta_max, eta };
        c.validate()?;
        Ok(c)
    }

    /// Built-in defaults overridden by whatever the case file declares.
    pub fn from_case(defaults: &CaseConstraints) -> ConstraintSet {
        let base = ConstraintSet::default();
        ConstraintSet {
            v_min: defaults.v_min.unwrap_or(base.v_min),
            v_max: defaults.v_max.unwrap_or(base.v_max),
            theta_max: defaults.theta_max.unwrap_or(base.theta_max),
            eta: defaults.eta.or(base.eta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConstraints(msg.into()));
        if !(self.v_min > 0.0 && self.v_min.is_finite() && self.v_max.is_finite()) {
            return bad("v_min must be positive");
        }
        if self.v_min > self.v_max {
            return bad("v_min exceeds v_max");
        }
        if !(self.theta_max >= 0.0 && self.theta_max.is_finite()) {
            return bad("theta_max must be a finite non-negative angle");
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad("eta must lie in (0, 1]");
            }
        }
        Ok(())
    }

    /// Effective angle bound: angle differences beyond π wrap around.
    pub fn theta_eff(&self) -> f64 {
        self.theta_max.min(std::f64::consts::PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "theorem1")]
    VoltageOnly,
    #[serde(rename = "theorem2")]
    Angle,
    #[serde(rename = "thermal")]
    Thermal,
    #[serde(rename = "pf-adjusted")]
    PowerFactor,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::VoltageOnly => "theorem1",
            Stage::Angle => "theorem2",
            Stage::Thermal => "thermal",
            Stage::PowerFactor => "pf-adjusted",
        }
    }
}

/// How the voltage magnitudes of a solution were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// The closed-form parity pattern.
    Pattern,
    /// Exact search over candidate magnitudes on the tree.
    TreeSearch,
    /// Moved off the stage-3 point by the power-factor repair.
    Repaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    VoltageMax { bus: i64 },
    VoltageMin { bus: i64 },
    Angle { from: i64, to: i64 },
    Thermal { from: i64, to: i64 },
    PowerFactor { bus: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageValue {
    pub stage: Stage,
    pub hc_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HCSolution {
    pub state: VoltageState,
    pub injections: InjectionProfile,
    pub hc_total: f64,
    pub binding: Vec<Binding>,
    pub stage: Stage,
    pub construction: Construction,
    /// Objective after every stage that ran, in order.
    pub history: Vec<StageValue>,
}

impl HCSolution {
    pub(crate) fn from_state(net: &Network, state: VoltageState, stage: Stage, construction: Construction) -> Result<HCSolution> {
        let injections = evaluate_injections(net, &state)?;
        let hc_total = weighted_sum(net, &injections.p);
        Ok(HCSolution {
            state,
            injections,
            hc_total,
            binding: Vec::new(),
            stage,
            construction,
            history: vec![StageValue { stage, hc_total }],
        })
    }

    fn followed_by(&self, mut next: HCSolution) -> HCSolution {
        let mut history = self.history.clone();
        history.extend(next.history);
        next.history = history;
        next
    }
}

/// Per-solve adjustments used when a network is one piece of a larger
/// feeder. The default context describes a standalone network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveContext {
    /// Added to every depth before taking parity.
    pub parity_offset: usize,
    /// Fixed magnitudes by bus index (empty = none pinned).
    pub pinned: Vec<Option<f64>>,
    /// Buses excluded from the power-factor floor (empty = none).
    pub pf_exempt: Vec<bool>,
    /// Candidate magnitudes per bus for the thermal search; computed from
    /// the network when absent.
    pub candidates: Option<Vec<Vec<f64>>>,
}

impl SolveContext {
    pub fn pinned(&self, i: usize) -> Option<f64> {
        self.pinned.get(i).copied().flatten()
    }

    pub fn pf_exempt(&self, i: usize) -> bool {
        self.pf_exempt.get(i).copied().unwrap_or(false)
    }
}

/// Inputs shared by every stage of one solve.
pub(crate) struct Problem<'a> {
    pub net: &'a Network,
    pub c: &'a ConstraintSet,
    pub ctx: &'a SolveContext,
    pub tree: RadialTree,
}

impl<'a> Problem<'a> {
    pub fn new(net: &'a Network, c: &'a ConstraintSet, ctx: &'a SolveContext) -> Result<Problem<'a>> {
        c.validate()?;
        let n = net.len();
        for len in [ctx.pinned.len(), ctx.pf_exempt.len()] {
            if len != 0 && len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(cands) = &ctx.candidates {
            if cands.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: cands.len() });
            }
        }
        let tree = net.radial_tree()?;
        net.check_conductance_signs()?;
        Ok(Problem { net, c, ctx, tree })
    }

    pub fn parity(&self, i: usize) -> Parity {
        Parity::from_depth(self.tree.depth[i] + self.ctx.parity_offset)
    }

    /// Magnitude of a bus that is not a decision variable.
    pub fn fixed(&self, i: usize) -> Option<f64> {
        if i == self.net.slack() {
            Some(self.net.buses()[i].v_set)
        } else {
            self.ctx.pinned(i)
        }
    }

    pub fn pf_applies(&self, i: usize) -> bool {
        self.c.eta.is_some()
            && self.net.buses()[i].kind == BusKind::Generator
            && !self.ctx.pf_exempt(i)
            && self.fixed(i).is_none()
    }
}

fn weighted_sum(net: &Network, p: &[f64]) -> f64 {
    net.buses().iter().zip(p).filter(|(b, _)| b.lambda != 0.0).map(|(b, p)| b.lambda * p).sum()
}

/// Σ_i λ_i P_i at the given state.
///
/// # Panics
/// If `state` does not have one entry per bus.
pub fn weighted_hc(net: &Network, state: &VoltageState) -> f64 {
    let inj = evaluate_injections(net, state).expect("state dimension must match the network");
    weighted_sum(net, &inj.p)
}

/// Angle bound above which the all-`v_max` pattern beats the high-low one.
pub fn critical_angle(v_max: f64, v_min: f64) -> f64 {
    ((v_max + v_min) / (2.0 * v_max)).clamp(-1.0, 1.0).acos()
}

/// Series current of a branch, `y (V_from − V_to)`.
pub fn branch_current(net: &Network, state: &VoltageState, branch: usize) -> Complex64 {
    let br = &net.branches()[branch];
    br.admittance() * (state.phasor(br.from) - state.phasor(br.to))
}

pub fn solve_voltage_only(net: &Network, c: &ConstraintSet) -> Result<HCSolution> {
    solve_voltage_only_in(net, c, &SolveContext::default())
}

pub fn solve_voltage_only_in(net: &Network, c: &ConstraintSet, ctx: &SolveContext) -> Result<HCSolution> {
    let real = ConstraintSet { theta_max: 0.0, ..c.clone() };
    let prob = Problem::new(net, &real, ctx)?;
    pattern::solve(&prob, Stage::VoltageOnly)
}

pub fn solve_with_angle(net: &Network, c: &ConstraintSet) -> Result<HCSolution> {
    solve_with_angle_in(net, c, &SolveContext::default())
}

pub fn solve_with_angle_in(net: &Network, c: &ConstraintSet, ctx: &SolveContext) -> Result<HCSolution> {
    if c.theta_max == 0.0 {
        return solve_voltage_only_in(net, c, ctx);
    }
    let prob = Problem::new(net, c, ctx)?;
    pattern::solve(&prob, Stage::Angle)
}

pub fn adjust_thermal(net: &Network, c: &ConstraintSet, sol: &HCSolution) -> Result<HCSolution> {
    adjust_thermal_in(net, c, &SolveContext::default(), sol)
}

pub fn adjust_thermal_in(net: &Network, c: &ConstraintSet, ctx: &SolveContext, sol: &HCSolution) -> Result<HCSolution> {
    let prob = Problem::new(net, c, ctx)?;
    thermal::adjust(&prob, sol)
}

pub fn adjust_power_factor(net: &Network, c: &ConstraintSet, sol: &HCSolution) -> Result<HCSolution> {
    adjust_power_factor_in(net, c, &SolveContext::default(), sol)
}

pub fn adjust_power_factor_in(net: &Network, c: &ConstraintSet, ctx: &SolveContext, sol: &HCSolution) -> Result<HCSolution> {
    let prob = Problem::new(net, c, ctx)?;
    pf::adjust(&prob, sol)
}

/// Full pipeline: angle pattern, thermal repair, power-factor repair,
/// then a global constraint check and binding-constraint report.
pub fn solve_hc(net: &Network, c: &ConstraintSet) -> Result<HCSolution> {
    solve_hc_in(net, c, &SolveContext::default())
}

pub fn solve_hc_in(net: &Network, c: &ConstraintSet, ctx: &SolveContext) -> Result<HCSolution> {
    let s1 = solve_with_angle_in(net, c, ctx)?;
    let prob = Problem::new(net, c, ctx)?;
    let s2 = thermal::adjust(&prob, &s1)?;
    let s2 = if s2.stage == s1.stage { s1 } else { s1.followed_by(s2) };
    let s3 = pf::adjust(&prob, &s2)?;
    let mut out = if s3.stage == s2.stage { s2 } else { s2.followed_by(s3) };
    let bad = check::violations(&prob, &out.state, &out.injections);
    if let Some(v) = bad.first() {
        return Err(Error::Verification(v.to_string()));
    }
    out.binding = check::binding(&prob, &out.state, &out.injections);
    Ok(out)
}

/// Candidate magnitudes per bus that the thermal search would use.
pub fn thermal_candidates(net: &Network, c: &ConstraintSet, ctx: &SolveContext) -> Result<Vec<Vec<f64>>> {
    let prob = Problem::new(net, c, ctx)?;
    Ok(thermal::candidate_sets(&prob))
}

#[cfg(test)]
mod tests;

/// Wraps a state built outside the pipeline (e.g. stitched from pieces)
/// and lists every constraint it violates.
pub(crate) fn assemble(
    net: &Network,
    c: &ConstraintSet,
    state: VoltageState,
    stage: Stage,
    construction: Construction,
) -> Result<(HCSolution, Vec<Violation>)> {
    let ctx = SolveContext::default();
    let prob = Problem::new(net, c, &ctx)?;
    let mut sol = HCSolution::from_state(net, state, stage, construction)?;
    let bad = check::violations(&prob, &sol.state, &sol.injections);
    sol.binding = check::binding(&prob, &sol.state, &sol.injections);
    Ok((sol, bad))
}
