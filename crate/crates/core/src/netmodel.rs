//! Feeder model: case-file parsing, bus admittance matrix and the radial
//! tree (depth, parity) that the voltage-pattern construction walks.
//!
//! Case file grammar, one record per line, `#` starts a comment:
//!
//! ```text
//! BASE <MVA> <kV>
//! BUS <id> <slack|gen|load> <Pload> <Qload> <lambda> [Vset]
//! BRANCH <from> <to> <r> <x> [C]
//! SHUNT <id> <g> <b>
//! CONSTRAINT <vmin|vmax|theta_max|eta> <value>
//! ```
//!
//! All quantities are per-unit on the declared base. `Vset` is only
//! meaningful on the slack bus (default 1.0).

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "gen")]
    Generator,
    Load,
}

impl BusKind {
    fn keyword(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Generator => "gen",
            BusKind::Load => "load",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn from_depth(depth: usize) -> Parity {
        if depth % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Identifier as written in the case file.
    pub id: i64,
    pub kind: BusKind,
    pub load_p: f64,
    pub load_q: f64,
    /// Objective weight of this bus's active injection.
    pub lambda: f64,
    /// Voltage magnitude setpoint, used for the slack bus.
    pub v_set: f64,
    pub shunt: Complex64,
    pub parity: Option<Parity>,
}

impl Bus {
    pub fn new(id: i64, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            load_p: 0.0,
            load_q: 0.0,
            lambda: if kind == BusKind::Slack { 0.0 } else { 1.0 },
            v_set: 1.0,
            shunt: Complex64::new(0.0, 0.0),
            parity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Bus indices (positions in [`Network::buses`]), not file ids.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Current magnitude limit C, p.u.
    pub thermal_limit: Option<f64>,
}

impl Branch {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Branch {
        Branch { from, to, r, x, thermal_limit: None }
    }

    pub fn admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }

    pub fn other(&self, bus: usize) -> usize {
        if self.from == bus {
            self.to
        } else {
            self.from
        }
    }
}

/// Constraint defaults declared in a case file; CLI flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseConstraints {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub theta_max: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub base_kv: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    ybus: DMatrix<Complex64>,
    slack: usize,
    pub defaults: CaseConstraints,
}

impl Network {
    /// Validates the bus/branch data and assembles the admittance matrix.
    pub fn new(base_mva: f64, base_kv: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Network> {
        let mut slack: Option<usize> = None;
        let mut seen = HashMap::new();
        for (i, bus) in buses.iter().enumerate() {
            if seen.insert(bus.id, i).is_some() {
                return Err(Error::DuplicateBus(bus.id));
            }
            if !(bus.lambda >= 0.0) || !bus.lambda.is_finite() {
                return Err(Error::InvalidBus { id: bus.id, msg: "lambda must be a finite non-negative number".into() });
            }
            if !(bus.v_set > 0.0) {
                return Err(Error::InvalidBus { id: bus.id, msg: "voltage setpoint must be positive".into() });
            }
            if bus.kind == BusKind::Slack {
                if let Some(s) = slack {
                    return Err(Error::MultipleSlack(buses[s].id, bus.id));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(Error::MissingSlack)?;
        let n = buses.len();
        for br in &branches {
            if br.from >= n || br.to >= n {
                return Err(Error::InvalidBranch { from: br.from as i64, to: br.to as i64, msg: "bus index out of range".into() });
            }
            let (from, to) = (buses[br.from].id, buses[br.to].id);
            if br.from == br.to {
                return Err(Error::InvalidBranch { from, to, msg: "self loop".into() });
            }
            if !(br.r >= 0.0) {
                return Err(Error::InvalidBranch { from, to, msg: "negative resistance".into() });
            }
            if let Some(c) = br.thermal_limit {
                if !(c > 0.0) {
                    return Err(Error::InvalidBranch { from, to, msg: "thermal limit must be positive".into() });
                }
            }
        }
        let ybus = build_ybus(&buses, &branches)?;
        let net = Network { base_mva, base_kv, buses, branches, ybus, slack, defaults: CaseConstraints::default() };
        net.check_connected()?;
        Ok(net)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn ybus(&self) -> &DMatrix<Complex64> {
        &self.ybus
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.lambda).collect()
    }

    /// Non-slack buses, in index order.
    pub fn free_buses(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| i != self.slack).collect()
    }

    /// Rebuilds the network after editing its buses (e.g. new weights).
    pub fn map_buses(&self, mut f: impl FnMut(usize, &mut Bus)) -> Result<Network> {
        let mut buses = self.buses.clone();
        for (i, b) in buses.iter_mut().enumerate() {
            f(i, b);
        }
        let mut net = Network::new(self.base_mva, self.base_kv, buses, self.branches.clone())?;
        net.defaults = self.defaults.clone();
        Ok(net)
    }

    /// Rebuilds the network after editing its branches (e.g. scaled limits).
    pub fn map_branches(&self, mut f: impl FnMut(usize, &mut Branch)) -> Result<Network> {
        let mut branches = self.branches.clone();
        for (i, b) in branches.iter_mut().enumerate() {
            f(i, b);
        }
        let mut net = Network::new(self.base_mva, self.base_kv, self.buses.clone(), branches)?;
        net.defaults = self.defaults.clone();
        Ok(net)
    }

    pub fn with_lambdas(&self, lambdas: &[f64]) -> Result<Network> {
        if lambdas.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: lambdas.len() });
        }
        self.map_buses(|i, b| b.lambda = lambdas[i])
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (k, br) in self.branches.iter().enumerate() {
            adj[br.from].push((br.to, k));
            adj[br.to].push((br.from, k));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(i) = queue.pop_front() {
            for &(k, _) in &adj[i] {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Disconnected(self.buses[i].id)),
            None => Ok(()),
        }
    }

    /// Breadth-first spanning structure rooted at the slack bus. Fails on
    /// meshed networks.
    pub fn radial_tree(&self) -> Result<RadialTree> {
        let n = self.len();
        if self.branches.len() != n - 1 {
            return Err(Error::NonRadial { buses: n, branches: self.branches.len() });
        }
        RadialTree::build(n, self.slack, &self.adjacency())
            .ok_or(Error::NonRadial { buses: n, branches: self.branches.len() })
    }

    /// Labels every bus with the parity of its depth below the slack
    /// (slack = even).
    pub fn assign_parity(&self) -> Result<Network> {
        let tree = self.radial_tree()?;
        let mut out = self.clone();
        for (i, bus) in out.buses.iter_mut().enumerate() {
            bus.parity = Some(Parity::from_depth(tree.depth[i]));
        }
        Ok(out)
    }

    pub fn conductance(&self, i: usize, k: usize) -> f64 {
        self.ybus[(i, k)].re
    }

    pub fn susceptance(&self, i: usize, k: usize) -> f64 {
        self.ybus[(i, k)].im
    }

    /// Rejects networks whose off-diagonal conductances are positive; the
    /// pattern construction relies on every −G_ik being non-negative.
    pub fn check_conductance_signs(&self) -> Result<()> {
        for br in &self.branches {
            let g = self.conductance(br.from, br.to);
            if g > 1e-12 {
                return Err(Error::PositiveTransferConductance {
                    from: self.buses[br.from].id,
                    to: self.buses[br.to].id,
                    g,
                });
            }
        }
        Ok(())
    }
}

/// Rooted view of a radial network.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Branch index connecting a bus to its parent.
    pub parent_branch: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order starting at the root.
    pub order: Vec<usize>,
}

impl RadialTree {
    pub(crate) fn build(n: usize, root: usize, adj: &[Vec<(usize, usize)>]) -> Option<RadialTree> {
        let mut parent = vec![None; n];
        let mut parent_branch = vec![None; n];
        let mut depth = vec![0; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(k, br) in &adj[i] {
                if parent_branch[i] == Some(br) {
                    continue;
                }
                if seen[k] {
                    // second path to k: cycle
                    return None;
                }
                seen[k] = true;
                parent[k] = Some(i);
                parent_branch[k] = Some(br);
                depth[k] = depth[i] + 1;
                children[i].push(k);
                queue.push_back(k);
            }
        }
        if order.len() != n {
            return None;
        }
        Some(RadialTree { root, parent, parent_branch, depth, children, order })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Children before parents.
    pub fn post_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().rev().copied()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }
}

/// Y[i][k] = −y for every branch (i,k); Y[i][i] = Σ incident y + shunt.
pub fn build_ybus(buses: &[Bus], branches: &[Branch]) -> Result<DMatrix<Complex64>> {
    let n = buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in branches {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::ZeroImpedance { from: buses[br.from].id, to: buses[br.to].id });
        }
        let ys = br.admittance();
        y[(br.from, br.from)] += ys;
        y[(br.to, br.to)] += ys;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
    }
    for (i, bus) in buses.iter().enumerate() {
        y[(i, i)] += bus.shunt;
    }
    Ok(y)
}

pub(crate) fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Syntax { line, msg: format!("invalid {what} '{tok}'") })?;
    if !v.is_finite() {
        return Err(Error::Syntax { line, msg: format!("{what} must be finite") });
    }
    Ok(v)
}

pub(crate) fn parse_id(tok: &str, line: usize) -> Result<i64> {
    tok.parse().map_err(|_| Error::Syntax { line, msg: format!("invalid bus id '{tok}'") })
}

pub(crate) fn expect_len(toks: &[&str], min: usize, max: usize, line: usize) -> Result<()> {
    if toks.len() < min || toks.len() > max {
        let record = toks[0];
        return Err(Error::Syntax {
            line,
            msg: format!("{record} record takes {} to {} fields, found {}", min - 1, max - 1, toks.len() - 1),
        });
    }
    Ok(())
}

/// Splits a case file into tokenised records, dropping comments and blanks.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

pub(crate) fn parse_base(toks: &[&str], line: usize) -> Result<(f64, f64)> {
    expect_len(toks, 3, 3, line)?;
    let mva = parse_num(toks[1], line, "base MVA")?;
    let kv = parse_num(toks[2], line, "base kV")?;
    if !(mva > 0.0 && kv > 0.0) {
        return Err(Error::Syntax { line, msg: "base values must be positive".into() });
    }
    Ok((mva, kv))
}

pub(crate) fn parse_kind(tok: &str, line: usize) -> Result<BusKind> {
    match tok.to_ascii_lowercase().as_str() {
        "slack" => Ok(BusKind::Slack),
        "gen" => Ok(BusKind::Generator),
        "load" => Ok(BusKind::Load),
        other => Err(Error::Syntax { line, msg: format!("unknown bus kind '{other}'") }),
    }
}

pub(crate) fn parse_constraint(toks: &[&str], line: usize, into: &mut CaseConstraints) -> Result<()> {
    expect_len(toks, 3, 3, line)?;
    let value = parse_num(toks[2], line, "constraint value")?;
    let slot = match toks[1].to_ascii_lowercase().as_str() {
        "vmin" => &mut into.v_min,
        "vmax" => &mut into.v_max,
        "theta_max" => &mut into.theta_max,
        "eta" => &mut into.eta,
        other => return Err(Error::Syntax { line, msg: format!("unknown constraint '{other}'") }),
    };
    *slot = Some(value);
    Ok(())
}

/// Parses a single-phase case file.
pub fn parse_case(text: &str) -> Result<Network> {
    let mut base = None;
    let mut buses: Vec<Bus> = Vec::new();
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut pending_branches: Vec<(usize, i64, i64, f64, f64, Option<f64>)> = Vec::new();
    let mut shunts: Vec<(usize, i64, Complex64)> = Vec::new();
    let mut defaults = CaseConstraints::default();
    let mut slack_line: Option<i64> = None;

    for (line, toks) in records(text) {
        match toks[0].to_ascii_uppercase().as_str() {
            "BASE" => {
                if base.is_some() {
                    return Err(Error::Syntax { line, msg: "duplicate BASE record".into() });
                }
                base = Some(parse_base(&toks, line)?);
            }
            "BUS" => {
                expect_len(&toks, 6, 7, line)?;
                let id = parse_id(toks[1], line)?;
                let kind = parse_kind(toks[2], line)?;
                let mut bus = Bus::new(id, kind);
                bus.load_p = parse_num(toks[3], line, "Pload")?;
                bus.load_q = parse_num(toks[4], line, "Qload")?;
                bus.lambda = parse_num(toks[5], line, "lambda")?;
                if let Some(v) = toks.get(6) {
                    bus.v_set = parse_num(v, line, "voltage setpoint")?;
                }
                if index.insert(id, buses.len()).is_some() {
                    return Err(Error::DuplicateBus(id));
                }
                if kind == BusKind::Slack {
                    if let Some(prev) = slack_line {
                        return Err(Error::MultipleSlack(prev, id));
                    }
                    slack_line = Some(id);
                }
                buses.push(bus);
            }
            "BRANCH" => {
                expect_len(&toks, 5, 6, line)?;
                let from = parse_id(toks[1], line)?;
                let to = parse_id(toks[2], line)?;
                let r = parse_num(toks[3], line, "resistance")?;
                let x = parse_num(toks[4], line, "reactance")?;
                let c = toks.get(5).map(|t| parse_num(t, line, "thermal limit")).transpose()?;
                pending_branches.push((line, from, to, r, x, c));
            }
            "SHUNT" => {
                expect_len(&toks, 4, 4, line)?;
                let id = parse_id(toks[1], line)?;
                let g = parse_num(toks[2], line, "shunt conductance")?;
                let b = parse_num(toks[3], line, "shunt susceptance")?;
                shunts.push((line, id, Complex64::new(g, b)));
            }
            "CONSTRAINT" => parse_constraint(&toks, line, &mut defaults)?,
            other => return Err(Error::Syntax { line, msg: format!("unknown record '{other}'") }),
        }
    }

    let (base_mva, base_kv) = base.ok_or(Error::Syntax { line: 0, msg: "missing BASE record".into() })?;
    let lookup = |line: usize, id: i64| index.get(&id).copied().ok_or(Error::UnknownBus { line, id });
    for (line, id, y) in shunts {
        let i = lookup(line, id)?;
        buses[i].shunt += y;
    }
    let mut branches = Vec::with_capacity(pending_branches.len());
    for (line, from, to, r, x, c) in pending_branches {
        let mut br = Branch::new(lookup(line, from)?, lookup(line, to)?, r, x);
        br.thermal_limit = c;
        branches.push(br);
    }
    let mut net = Network::new(base_mva, base_kv, buses, branches)?;
    net.defaults = defaults;
    Ok(net)
}

/// Writes a case file that [`parse_case`] reads back to identical values.
pub fn serialize_case(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "BASE {:?} {:?}", net.base_mva, net.base_kv);
    let d = &net.defaults;
    for (key, value) in [("vmin", d.v_min), ("vmax", d.v_max), ("theta_max", d.theta_max), ("eta", d.eta)] {
        if let Some(v) = value {
            let _ = writeln!(out, "CONSTRAINT {key} {v:?}");
        }
    }
    for bus in net.buses() {
        let _ = writeln!(
            out,
            "BUS {} {} {:?} {:?} {:?} {:?}",
            bus.id,
            bus.kind.keyword(),
            bus.load_p,
            bus.load_q,
            bus.lambda,
            bus.v_set
        );
    }
    for bus in net.buses() {
        if bus.shunt != Complex64::new(0.0, 0.0) {
            let _ = writeln!(out, "SHUNT {} {:?} {:?}", bus.id, bus.shunt.re, bus.shunt.im);
        }
    }
    for br in net.branches() {
        let (from, to) = (net.buses()[br.from].id, net.buses()[br.to].id);
        match br.thermal_limit {
            Some(c) => {
                let _ = writeln!(out, "BRANCH {from} {to} {:?} {:?} {c:?}", br.r, br.x);
            }
            None => {
                let _ = writeln!(out, "BRANCH {from} {to} {:?} {:?}", br.r, br.x);
            }
        }
    }
    out
}
