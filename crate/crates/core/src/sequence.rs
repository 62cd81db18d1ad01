//! Three-phase feeders through symmetrical components.
//!
//! Phase quantities map to sequence quantities by `V_abc = T V_012` with
//! `T = [[1, 1, 1], [1, α², α], [1, α, α²]]` and α = 1∠120°. This scaling
//! is not power invariant: `Σ V_abc I_abc* = 3 Σ V_012 I_012*`.
//!
//! The hosting capacity is solved on the positive-sequence network. The
//! zero- and negative-sequence voltages then follow from the linear nodal
//! equations `Y^m V^m = I^m`. Their sources are the load currents that
//! unbalanced loads draw and the cross-sequence currents of untransposed
//! lines.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hccore::{solve_hc, ConstraintSet, HCSolution};
use crate::netmodel::{
    expect_len, parse_base, parse_constraint, parse_id, parse_kind, parse_num, records, Branch, Bus, BusKind, CaseConstraints, Network,
};

/// Relative cross-sequence coupling above which the decoupled model is refused.
pub const DEFAULT_COUPLING_THRESHOLD: f64 = 0.05;
/// Phase voltages below this magnitude are floored when dividing a load by them.
pub const VOLTAGE_FLOOR: f64 = 1e-6;
/// Coupling below this is treated as a transposed line.
const TRANSPOSED_TOL: f64 = 1e-9;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn alpha() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

/// `T`, mapping (zero, positive, negative) to (a, b, c).
pub fn t_matrix() -> Matrix3<Complex64> {
    let a = alpha();
    let one = Complex64::new(1.0, 0.0);
    Matrix3::new(one, one, one, one, a * a, a, one, a, a * a)
}

/// `T⁻¹ = (1/3) [[1, 1, 1], [1, α, α²], [1, α², α]]`.
pub fn t_inverse() -> Matrix3<Complex64> {
    let a = alpha();
    let one = Complex64::new(1.0, 0.0);
    Matrix3::new(one, one, one, one, a, a * a, one, a * a, a) / Complex64::new(3.0, 0.0)
}

/// One complex quantity per phase; absent phases hold zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
}

impl PhaseVector {
    pub fn new(a: Complex64, b: Complex64, c: Complex64) -> PhaseVector {
        PhaseVector { a, b, c }
    }

    /// Positive-sequence set `(v, α² v, α v)`.
    pub fn balanced(v: Complex64) -> PhaseVector {
        let a = alpha();
        PhaseVector::new(v, a * a * v, a * v)
    }

    pub fn to_array(self) -> [Complex64; 3] {
        [self.a, self.b, self.c]
    }

    /// `[V⁰, V¹, V²] = T⁻¹ V_abc`.
    pub fn to_sequence(self) -> [Complex64; 3] {
        let s = t_inverse() * Vector3::new(self.a, self.b, self.c);
        [s[0], s[1], s[2]]
    }

    pub fn from_sequence(seq: [Complex64; 3]) -> PhaseVector {
        let v = t_matrix() * Vector3::new(seq[0], seq[1], seq[2]);
        PhaseVector::new(v[0], v[1], v[2])
    }

    pub fn magnitudes(self) -> [f64; 3] {
        [self.a.norm(), self.b.norm(), self.c.norm()]
    }
}

/// Sequence admittances of a three-phase network.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSystem {
    /// `T⁻¹ Y_abc T` blockwise, laid out like `Y_abc` (three rows per bus).
    pub y012: DMatrix<Complex64>,
    pub y0: DMatrix<Complex64>,
    pub y1: DMatrix<Complex64>,
    pub y2: DMatrix<Complex64>,
    /// Largest cross-sequence entry magnitude.
    pub coupling: f64,
    /// `coupling` divided by the largest same-sequence entry magnitude.
    pub coupling_rel: f64,
}

impl SequenceSystem {
    /// Entry (i, k) of the block coupling sequence `m` to sequence `n`.
    pub fn entry(&self, m: usize, n: usize, i: usize, k: usize) -> Complex64 {
        self.y012[(3 * i + m, 3 * k + n)]
    }

    pub fn buses(&self) -> usize {
        self.y012.nrows() / 3
    }
}

fn block(y: &DMatrix<Complex64>, i: usize, k: usize) -> Matrix3<Complex64> {
    Matrix3::from_fn(|r, c| y[(3 * i + r, 3 * k + c)])
}

/// Applies `T⁻¹ Y T` to every 3×3 block of a phase admittance matrix.
pub fn sequence_ybus(y_abc: &DMatrix<Complex64>) -> Result<SequenceSystem> {
    let dim = y_abc.nrows();
    if dim % 3 != 0 || y_abc.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: 3 * (dim / 3 + 1), got: dim });
    }
    let n = dim / 3;
    let (t, ti) = (t_matrix(), t_inverse());
    let mut y012 = DMatrix::from_element(dim, dim, ZERO);
    let (mut cross, mut own) = (0.0f64, 0.0f64);
    for i in 0..n {
        for k in 0..n {
            let b = ti * block(y_abc, i, k) * t;
            for r in 0..3 {
                for c in 0..3 {
                    y012[(3 * i + r, 3 * k + c)] = b[(r, c)];
                    if r == c {
                        own = own.max(b[(r, c)].norm());
                    } else {
                        cross = cross.max(b[(r, c)].norm());
                    }
                }
            }
        }
    }
    let part = |m: usize| DMatrix::from_fn(n, n, |i, k| y012[(3 * i + m, 3 * k + m)]);
    let coupling_rel = if own > 0.0 { cross / own } else { 0.0 };
    Ok(SequenceSystem { y0: part(0), y1: part(1), y2: part(2), y012, coupling: cross, coupling_rel })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus3 {
    pub id: i64,
    pub kind: BusKind,
    /// Load per phase, P + jQ in p.u.
    pub load: [Complex64; 3],
    pub lambda: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch3 {
    pub from: usize,
    pub to: usize,
    /// Series impedance per phase pair; rows and columns of absent phases are zero.
    pub z: Matrix3<Complex64>,
    pub thermal_limit: Option<f64>,
}

impl Branch3 {
    fn phases(&self) -> Vec<usize> {
        (0..3).filter(|&p| (0..3).any(|q| self.z[(p, q)] != ZERO || self.z[(q, p)] != ZERO)).collect()
    }

    /// Series admittance block: the inverse of the present-phase part of `z`.
    pub fn admittance(&self) -> Option<Matrix3<Complex64>> {
        let ph = self.phases();
        if ph.is_empty() {
            return None;
        }
        let sub = DMatrix::from_fn(ph.len(), ph.len(), |r, c| self.z[(ph[r], ph[c])]);
        let inv = sub.try_inverse()?;
        let mut y = Matrix3::from_element(ZERO);
        for (r, &p) in ph.iter().enumerate() {
            for (c, &q) in ph.iter().enumerate() {
                y[(p, q)] = inv[(r, c)];
            }
        }
        Some(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreePhaseNetwork {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus3>,
    pub branches: Vec<Branch3>,
    pub defaults: CaseConstraints,
}

impl ThreePhaseNetwork {
    pub fn slack(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated on parse")
    }

    fn branch_admittance(&self, br: &Branch3) -> Result<Matrix3<Complex64>> {
        br.admittance().ok_or(Error::ZeroImpedance { from: self.buses[br.from].id, to: self.buses[br.to].id })
    }

    /// Phase admittance matrix, three rows and columns per bus.
    pub fn y_abc(&self) -> Result<DMatrix<Complex64>> {
        let n = self.buses.len();
        let mut y = DMatrix::from_element(3 * n, 3 * n, ZERO);
        for br in &self.branches {
            let yb = self.branch_admittance(br)?;
            for r in 0..3 {
                for c in 0..3 {
                    let v = yb[(r, c)];
                    y[(3 * br.from + r, 3 * br.from + c)] += v;
                    y[(3 * br.to + r, 3 * br.to + c)] += v;
                    y[(3 * br.from + r, 3 * br.to + c)] -= v;
                    y[(3 * br.to + r, 3 * br.from + c)] -= v;
                }
            }
        }
        Ok(y)
    }

    /// Single-phase network of positive-sequence branch admittances and
    /// per-phase average loads.
    pub fn positive_sequence(&self) -> Result<Network> {
        let (t, ti) = (t_matrix(), t_inverse());
        let buses = self
            .buses
            .iter()
            .map(|b| {
                let mut bus = Bus::new(b.id, b.kind);
                let avg = (b.load[0] + b.load[1] + b.load[2]) / 3.0;
                bus.load_p = avg.re;
                bus.load_q = avg.im;
                bus.lambda = b.lambda;
                bus.v_set = b.v_set;
                bus
            })
            .collect();
        let mut branches = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let y1 = (ti * self.branch_admittance(br)? * t)[(1, 1)];
            if y1.norm() == 0.0 {
                return Err(Error::ZeroImpedance { from: self.buses[br.from].id, to: self.buses[br.to].id });
            }
            let z1 = y1.inv();
            let mut b = Branch::new(br.from, br.to, z1.re, z1.im);
            b.thermal_limit = br.thermal_limit;
            branches.push(b);
        }
        let mut net = Network::new(self.base_mva, self.base_kv, buses, branches)?;
        net.defaults = self.defaults.clone();
        Ok(net)
    }

    pub fn has_unbalanced_load(&self) -> bool {
        self.buses.iter().any(|b| (b.load[0] - b.load[1]).norm() > 1e-12 || (b.load[0] - b.load[2]).norm() > 1e-12)
    }
}

/// Parses the three-phase case format: `BUS3` and `BRANCH3` records plus
/// the `BASE` and `CONSTRAINT` records of the single-phase format.
pub fn parse_case3(text: &str) -> Result<ThreePhaseNetwork> {
    let mut base = None;
    let mut buses: Vec<Bus3> = Vec::new();
    let mut pending = Vec::new();
    let mut defaults = CaseConstraints::default();
    for (line, toks) in records(text) {
        match toks[0].to_ascii_uppercase().as_str() {
            "BASE" => {
                if base.is_some() {
                    return Err(Error::Syntax { line, msg: "duplicate BASE record".into() });
                }
                base = Some(parse_base(&toks, line)?);
            }
            "BUS3" => {
                expect_len(&toks, 10, 11, line)?;
                let id = parse_id(toks[1], line)?;
                let kind = parse_kind(toks[2], line)?;
                let mut load = [ZERO; 3];
                for (p, slot) in load.iter_mut().enumerate() {
                    let re = parse_num(toks[3 + 2 * p], line, "phase load P")?;
                    let im = parse_num(toks[4 + 2 * p], line, "phase load Q")?;
                    *slot = Complex64::new(re, im);
                }
                let lambda = parse_num(toks[9], line, "lambda")?;
                let v_set = toks.get(10).map(|t| parse_num(t, line, "voltage setpoint")).transpose()?.unwrap_or(1.0);
                if buses.iter().any(|b| b.id == id) {
                    return Err(Error::DuplicateBus(id));
                }
                if kind == BusKind::Slack {
                    if let Some(prev) = buses.iter().find(|b| b.kind == BusKind::Slack) {
                        return Err(Error::MultipleSlack(prev.id, id));
                    }
                }
                buses.push(Bus3 { id, kind, load, lambda, v_set });
            }
            "BRANCH3" => {
                expect_len(&toks, 21, 22, line)?;
                let from = parse_id(toks[1], line)?;
                let to = parse_id(toks[2], line)?;
                let mut vals = [0.0; 18];
                for (k, v) in vals.iter_mut().enumerate() {
                    *v = parse_num(toks[3 + k], line, "impedance")?;
                }
                let z = Matrix3::from_fn(|r, c| Complex64::new(vals[6 * r + 2 * c], vals[6 * r + 2 * c + 1]));
                let limit = toks.get(21).map(|t| parse_num(t, line, "thermal limit")).transpose()?;
                pending.push((line, from, to, z, limit));
            }
            "CONSTRAINT" => parse_constraint(&toks, line, &mut defaults)?,
            other => return Err(Error::Syntax { line, msg: format!("unknown record '{other}'") }),
        }
    }
    let (base_mva, base_kv) = base.ok_or(Error::Syntax { line: 0, msg: "missing BASE record".into() })?;
    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(Error::MissingSlack);
    }
    let lookup = |line: usize, id: i64| buses.iter().position(|b| b.id == id).ok_or(Error::UnknownBus { line, id });
    let mut branches = Vec::with_capacity(pending.len());
    for (line, from, to, z, thermal_limit) in pending {
        branches.push(Branch3 { from: lookup(line, from)?, to: lookup(line, to)?, z, thermal_limit });
    }
    let net = ThreePhaseNetwork { base_mva, base_kv, buses, branches, defaults };
    // Validates ids, limits, connectivity and impedances.
    net.positive_sequence()?;
    Ok(net)
}

/// Writes a case that [`parse_case3`] reads back to identical values.
pub fn serialize_case3(net: &ThreePhaseNetwork) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "BASE {:?} {:?}", net.base_mva, net.base_kv);
    let d = &net.defaults;
    for (key, value) in [("vmin", d.v_min), ("vmax", d.v_max), ("theta_max", d.theta_max), ("eta", d.eta)] {
        if let Some(v) = value {
            let _ = writeln!(out, "CONSTRAINT {key} {v:?}");
        }
    }
    for b in &net.buses {
        let kind = match b.kind {
            BusKind::Slack => "slack",
            BusKind::Generator => "gen",
            BusKind::Load => "load",
        };
        let _ = write!(out, "BUS3 {} {kind}", b.id);
        for s in b.load {
            let _ = write!(out, " {:?} {:?}", s.re, s.im);
        }
        let _ = writeln!(out, " {:?} {:?}", b.lambda, b.v_set);
    }
    for br in &net.branches {
        let _ = write!(out, "BRANCH3 {} {}", net.buses[br.from].id, net.buses[br.to].id);
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {:?} {:?}", br.z[(r, c)].re, br.z[(r, c)].im);
            }
        }
        if let Some(c) = br.thermal_limit {
            let _ = write!(out, " {c:?}");
        }
        out.push('\n');
    }
    out
}

/// Zero- and negative-sequence current injections of the loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalanceCurrents {
    pub i0: Vec<Complex64>,
    pub i2: Vec<Complex64>,
    /// Ids of buses where a phase voltage was floored at [`VOLTAGE_FLOOR`].
    pub floored: Vec<i64>,
}

/// Each phase load draws `(S_φ / V_φ)*`; the sequence parts of the
/// injected current `−T⁻¹ I_load` are returned for m ∈ {0, 2}. Balanced
/// loads on balanced voltages give zero.
pub fn unbalance_currents(net: &ThreePhaseNetwork, voltages: &[PhaseVector]) -> Result<UnbalanceCurrents> {
    let n = net.buses.len();
    if voltages.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: voltages.len() });
    }
    let mut out = UnbalanceCurrents { i0: vec![ZERO; n], i2: vec![ZERO; n], floored: Vec::new() };
    for (i, (bus, v)) in net.buses.iter().zip(voltages).enumerate() {
        let mut floored = false;
        let mut drawn = [ZERO; 3];
        for (p, vp) in v.to_array().into_iter().enumerate() {
            if bus.load[p] == ZERO {
                continue;
            }
            let vp = if vp.norm() < VOLTAGE_FLOOR {
                floored = true;
                Complex64::from_polar(VOLTAGE_FLOOR, vp.arg())
            } else {
                vp
            };
            drawn[p] = (bus.load[p] / vp).conj();
        }
        if floored {
            out.floored.push(bus.id);
        }
        let seq = PhaseVector::new(-drawn[0], -drawn[1], -drawn[2]).to_sequence();
        out.i0[i] = seq[0];
        out.i2[i] = seq[2];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Balanced,
    UntransposedLines,
    UnbalancedLoad,
    UntransposedLinesUnbalancedLoad,
}

impl Scenario {
    pub fn detect(coupling_rel: f64, unbalanced_load: bool) -> Scenario {
        match (coupling_rel > TRANSPOSED_TOL, unbalanced_load) {
            (false, false) => Scenario::Balanced,
            (true, false) => Scenario::UntransposedLines,
            (false, true) => Scenario::UnbalancedLoad,
            (true, true) => Scenario::UntransposedLinesUnbalancedLoad,
        }
    }

    pub fn method(self) -> &'static str {
        match self {
            Scenario::Balanced => "HC model",
            Scenario::UntransposedLines => "sequence line model",
            Scenario::UnbalancedLoad => "sequence load current",
            Scenario::UntransposedLinesUnbalancedLoad => "sequence line model + sequence load current",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedOptions {
    pub coupling_threshold: f64,
    /// Extra passes that recompute the load currents at the recombined
    /// phase voltages. Zero means a single pass.
    pub outer_iterations: usize,
}

impl Default for UnbalancedOptions {
    fn default() -> Self {
        UnbalancedOptions { coupling_threshold: DEFAULT_COUPLING_THRESHOLD, outer_iterations: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseViolation {
    pub bus: i64,
    /// 0, 1, 2 for phases a, b, c.
    pub phase: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedSolution {
    /// Solution of the positive-sequence network.
    pub positive: HCSolution,
    pub v0: Vec<Complex64>,
    pub v2: Vec<Complex64>,
    pub phase_voltages: Vec<PhaseVector>,
    /// Σ λ_i P_i per phase.
    pub hc_per_phase: [f64; 3],
    pub hc_total: f64,
    pub coupling_rel: f64,
    pub scenario: Scenario,
    pub method: String,
    /// Phase magnitudes outside [v_min, v_max] after recombination.
    pub violations: Vec<PhaseViolation>,
    pub floored: Vec<i64>,
}

/// Solves `Y^m V^m = I^m` with the slack bus as the zero reference.
fn solve_sequence(y: &DMatrix<Complex64>, rhs: &[Complex64], slack: usize, m: u8) -> Result<Vec<Complex64>> {
    let n = y.nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut out = vec![ZERO; n];
    if keep.is_empty() {
        return Ok(out);
    }
    let a = DMatrix::from_fn(keep.len(), keep.len(), |r, c| y[(keep[r], keep[c])]);
    let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| rhs[i]));
    let x = a.lu().solve(&b).ok_or(Error::SingularSequence { sequence: m })?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SingularSequence { sequence: m });
    }
    for (r, &i) in keep.iter().enumerate() {
        out[i] = x[r];
    }
    Ok(out)
}

pub fn solve_unbalanced_hc(net: &ThreePhaseNetwork, c: &ConstraintSet, opts: &UnbalancedOptions) -> Result<UnbalancedSolution> {
    let y_abc = net.y_abc()?;
    let seq = sequence_ybus(&y_abc)?;
    if seq.coupling_rel > opts.coupling_threshold {
        return Err(Error::DecouplingExceeded { metric: seq.coupling_rel, threshold: opts.coupling_threshold });
    }
    let pos_net = net.positive_sequence()?;
    let positive = solve_hc(&pos_net, c)?;
    let n = net.buses.len();
    let slack = net.slack();
    let v1 = positive.state.phasors();

    let mut v0 = vec![ZERO; n];
    let mut v2 = vec![ZERO; n];
    let mut phase_voltages: Vec<PhaseVector> = v1.iter().map(|&v| PhaseVector::balanced(v)).collect();
    let mut floored = Vec::new();
    for _ in 0..=opts.outer_iterations {
        let cur = unbalance_currents(net, &phase_voltages)?;
        floored = cur.floored;
        // Cross-sequence currents of untransposed lines, taken to the
        // right-hand side of each decoupled equation.
        let rhs = |m: usize, own: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|i| {
                    let mut s = own[i];
                    for k in 0..n {
                        s -= seq.entry(m, 1, i, k) * v1[k];
                        let other = if m == 0 { v2[k] } else { v0[k] };
                        s -= seq.entry(m, 2 - m, i, k) * other;
                    }
                    s
                })
                .collect()
        };
        let (r0, r2) = (rhs(0, &cur.i0), rhs(2, &cur.i2));
        v0 = solve_sequence(&seq.y0, &r0, slack, 0)?;
        v2 = solve_sequence(&seq.y2, &r2, slack, 2)?;
        phase_voltages = (0..n).map(|i| PhaseVector::from_sequence([v0[i], v1[i], v2[i]])).collect();
    }

    let flat: Vec<Complex64> = phase_voltages.iter().flat_map(|v| v.to_array()).collect();
    let current = &y_abc * DVector::from_vec(flat.clone());
    let mut hc_per_phase = [0.0; 3];
    for (i, bus) in net.buses.iter().enumerate() {
        for (p, hc) in hc_per_phase.iter_mut().enumerate() {
            let s = flat[3 * i + p] * current[3 * i + p].conj();
            *hc += bus.lambda * s.re;
        }
    }
    let mut violations = Vec::new();
    for (i, v) in phase_voltages.iter().enumerate() {
        if i == slack {
            continue;
        }
        for (phase, magnitude) in v.magnitudes().into_iter().enumerate() {
            if magnitude > c.v_max + 1e-9 || magnitude < c.v_min - 1e-9 {
                violations.push(PhaseViolation { bus: net.buses[i].id, phase, magnitude });
            }
        }
    }
    let scenario = Scenario::detect(seq.coupling_rel, net.has_unbalanced_load());
    Ok(UnbalancedSolution {
        positive,
        v0,
        v2,
        phase_voltages,
        hc_total: hc_per_phase.iter().sum(),
        hc_per_phase,
        coupling_rel: seq.coupling_rel,
        scenario,
        method: scenario.method().to_string(),
        violations,
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_times_inverse_is_identity() {
        let p = t_matrix() * t_inverse();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((p[(r, c)] - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn balanced_set_is_pure_positive_sequence() {
        let s = PhaseVector::balanced(Complex64::new(1.0, 0.0)).to_sequence();
        assert!(s[0].norm() < 1e-15 && s[2].norm() < 1e-15);
        assert!((s[1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
