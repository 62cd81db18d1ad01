//! Solving a feeder as independent pieces.
//!
//! Cut buses split the tree into subsystems. A cut bus is the root of the
//! subsystem below it and a leaf of the one above, so it is the only
//! variable two subsystems share. Branches belong to the one subsystem that
//! holds both of their ends, so subsystem objectives add up to the global
//! one.
//!
//! Each subsystem is solved for every candidate magnitude of its cut
//! buses, concurrently. The candidates are the global thermal-search values,
//! which include the global parity pattern. A dynamic program over the
//! subsystem tree then picks the boundary values, so both sides of a cut
//! always agree. A power-factor floor couples a cut bus to both sides; when
//! the stitched state breaks it, the solve falls back to the monolithic
//! pipeline and says so.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hccore::{self, solve_hc, solve_hc_in, thermal_candidates, ConstraintSet, Construction, HCSolution, SolveContext, Stage};
use crate::netmodel::{BusKind, Network};
use crate::powerflow::VoltageState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsystem {
    /// Global index of the slack bus or of the cut bus this piece hangs from.
    pub root: usize,
    /// Global bus indices, root first, then tree order.
    pub buses: Vec<usize>,
    /// Global branch indices owned by this piece.
    pub branches: Vec<usize>,
    /// Cut buses other than the root that end this piece.
    pub leaf_cuts: Vec<usize>,
}

impl Subsystem {
    /// Whether a bus is shared with a neighbouring subsystem.
    pub fn is_coupling(&self, bus: usize, p: &Partition) -> bool {
        self.buses.contains(&bus) && p.cut_buses.contains(&bus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Cut buses in tree order.
    pub cut_buses: Vec<usize>,
    /// Subsystem 0 holds the slack; subsystem t > 0 hangs from `cut_buses[t - 1]`.
    pub subsystems: Vec<Subsystem>,
    /// Index of the subsystem above each subsystem (none for the first).
    pub parent: Vec<Option<usize>>,
}

/// Splits the network at the given case-file bus ids.
pub fn make_partition(net: &Network, cut_ids: &[i64]) -> Result<Partition> {
    let tree = net.radial_tree()?;
    let mut cuts = Vec::with_capacity(cut_ids.len());
    for &id in cut_ids {
        let i = net.index_of(id).ok_or_else(|| Error::InvalidPartition(format!("unknown bus {id}")))?;
        if i == net.slack() {
            return Err(Error::InvalidPartition(format!("bus {id} is the slack bus")));
        }
        if tree.is_leaf(i) {
            return Err(Error::InvalidPartition(format!("bus {id} is a leaf and splits nothing")));
        }
        if cuts.contains(&i) {
            return Err(Error::InvalidPartition(format!("bus {id} listed twice")));
        }
        cuts.push(i);
    }
    let pos: HashMap<usize, usize> = tree.order.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    cuts.sort_by_key(|i| pos[i]);

    let roots: Vec<usize> = std::iter::once(tree.root).chain(cuts.iter().copied()).collect();
    let mut subsystems = Vec::with_capacity(roots.len());
    for &root in &roots {
        let mut sub = Subsystem { root, buses: vec![root], branches: Vec::new(), leaf_cuts: Vec::new() };
        let mut stack: Vec<usize> = tree.children[root].iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            sub.buses.push(i);
            sub.branches.push(tree.parent_branch[i].unwrap());
            if cuts.contains(&i) {
                sub.leaf_cuts.push(i);
            } else {
                stack.extend(tree.children[i].iter().rev());
            }
        }
        subsystems.push(sub);
    }
    let parent = roots
        .iter()
        .map(|&r| (r != tree.root).then(|| subsystems.iter().position(|s| s.leaf_cuts.contains(&r)).unwrap()))
        .collect();
    Ok(Partition { cut_buses: cuts, subsystems, parent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedSolution {
    pub solution: HCSolution,
    /// Objective of each subsystem at the chosen boundary values.
    pub subsystem_hc: Vec<f64>,
    /// Chosen magnitude of every cut bus, by case-file id.
    pub boundary: Vec<(i64, f64)>,
    pub workers: usize,
    /// Why the monolithic pipeline was used instead, if it was.
    pub fallback: Option<String>,
}

/// One subsystem as a standalone network.
struct Piece {
    net: Network,
    /// Global index of each local bus.
    global: Vec<usize>,
    /// Local index of each leaf cut.
    leaf_local: Vec<usize>,
    depth: usize,
}

fn build_piece(net: &Network, sub: &Subsystem, depth: usize) -> Result<Piece> {
    let local: HashMap<usize, usize> = sub.buses.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let buses = sub
        .buses
        .iter()
        .map(|&i| {
            let mut b = net.buses()[i].clone();
            if i == sub.root {
                b.kind = BusKind::Slack;
            } else if b.kind == BusKind::Slack {
                unreachable!("slack is always a root");
            }
            if sub.leaf_cuts.contains(&i) {
                // The shunt is counted once, in the piece the bus roots.
                b.shunt = num_complex::Complex64::new(0.0, 0.0);
            }
            b
        })
        .collect();
    let branches = sub
        .branches
        .iter()
        .map(|&k| {
            let mut br = net.branches()[k].clone();
            br.from = local[&br.from];
            br.to = local[&br.to];
            br
        })
        .collect();
    let piece = Network::new(net.base_mva, net.base_kv, buses, branches)?;
    let leaf_local = sub.leaf_cuts.iter().map(|i| local[i]).collect();
    Ok(Piece { net: piece, global: sub.buses.clone(), leaf_local, depth })
}

/// A subsystem as a standalone network rooted at its slack or cut bus,
/// buses in [`Subsystem::buses`] order.
pub fn subsystem_network(net: &Network, sub: &Subsystem) -> Result<Network> {
    Ok(build_piece(net, sub, 0)?.net)
}

/// Result of one subsystem solve at fixed boundary magnitudes.
struct PieceResult {
    hc: f64,
    state: VoltageState,
    stage: Stage,
    construction: Construction,
}

fn solve_piece(piece: &Piece, c: &ConstraintSet, cands: &[Vec<f64>], root_v: f64, leaf_v: &[f64]) -> Result<PieceResult> {
    let n = piece.net.len();
    let net = piece.net.map_buses(|i, b| {
        if i == 0 {
            b.v_set = root_v;
        }
    })?;
    let mut pinned = vec![None; n];
    let mut local_cands: Vec<Vec<f64>> = piece.global.iter().map(|&g| cands[g].clone()).collect();
    local_cands[0] = vec![root_v];
    for (&l, &v) in piece.leaf_local.iter().zip(leaf_v) {
        pinned[l] = Some(v);
        local_cands[l] = vec![v];
    }
    let ctx = SolveContext { parity_offset: piece.depth, pinned, pf_exempt: Vec::new(), candidates: Some(local_cands) };
    let local_c = ConstraintSet { eta: None, ..c.clone() };
    let sol = solve_hc_in(&net, &local_c, &ctx)?;
    Ok(PieceResult { hc: sol.hc_total, state: sol.state, stage: sol.stage, construction: sol.construction })
}

/// Mixed-radix enumeration of index tuples.
fn tuples(radices: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &r in radices {
        out = out.into_iter().flat_map(|t| (0..r).map(move |k| [t.clone(), vec![k]].concat())).collect();
    }
    out
}

/// Solves every subsystem on `workers` threads and stitches the result.
pub fn solve_distributed_hc(net: &Network, c: &ConstraintSet, p: &Partition, workers: usize) -> Result<DistributedSolution> {
    let workers = workers.max(1);
    if p.cut_buses.is_empty() {
        let solution = solve_hc(net, c)?;
        return Ok(DistributedSolution {
            subsystem_hc: vec![solution.hc_total],
            solution,
            boundary: Vec::new(),
            workers,
            fallback: None,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidPartition(format!("thread pool: {e}")))?;
    let tree = net.radial_tree()?;
    let cands = thermal_candidates(net, &ConstraintSet { eta: None, ..c.clone() }, &SolveContext::default())?;
    let slack_v = net.buses()[net.slack()].v_set;
    let root_values = |s: &Subsystem| if s.root == tree.root { vec![slack_v] } else { cands[s.root].clone() };

    let pieces: Vec<Piece> =
        p.subsystems.iter().map(|s| build_piece(net, s, tree.depth[s.root])).collect::<Result<_>>()?;
    // (subsystem, root value index, leaf value indices)
    let mut tasks = Vec::new();
    for (t, s) in p.subsystems.iter().enumerate() {
        let radices: Vec<usize> = s.leaf_cuts.iter().map(|&l| cands[l].len()).collect();
        for r in 0..root_values(s).len() {
            for leaves in tuples(&radices) {
                tasks.push((t, r, leaves));
            }
        }
    }
    let results: Vec<Result<PieceResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(t, r, leaves)| {
                let s = &p.subsystems[*t];
                let leaf_v: Vec<f64> = s.leaf_cuts.iter().zip(leaves).map(|(&l, &k)| cands[l][k]).collect();
                solve_piece(&pieces[*t], c, &cands, root_values(s)[*r], &leaf_v)
            })
            .collect()
    });
    let mut table: HashMap<(usize, usize, Vec<usize>), PieceResult> = HashMap::new();
    for ((t, r, leaves), res) in tasks.into_iter().zip(results) {
        match res {
            Ok(v) => {
                table.insert((t, r, leaves), v);
            }
            Err(e) if e.is_infeasibility() => {}
            Err(e) => return Err(e),
        }
    }

    // best[t][r]: best objective of subsystem t and everything below it
    // with its root at value r, and the leaf choice that attains it.
    let m = p.subsystems.len();
    let mut best: Vec<Vec<Option<(f64, Vec<usize>)>>> = vec![Vec::new(); m];
    let child_of = |leaf: usize| p.subsystems.iter().position(|s| s.root == leaf).unwrap();
    for t in (0..m).rev() {
        let s = &p.subsystems[t];
        let radices: Vec<usize> = s.leaf_cuts.iter().map(|&l| cands[l].len()).collect();
        let mut row = Vec::new();
        for r in 0..root_values(s).len() {
            let mut top: Option<(f64, Vec<usize>)> = None;
            for leaves in tuples(&radices) {
                let Some(own) = table.get(&(t, r, leaves.clone())) else { continue };
                let mut total = own.hc;
                for (&l, &k) in s.leaf_cuts.iter().zip(&leaves) {
                    match &best[child_of(l)][k] {
                        Some((v, _)) => total += v,
                        None => total = f64::NEG_INFINITY,
                    }
                }
                if total > f64::NEG_INFINITY && top.as_ref().is_none_or(|(v, _)| total > *v) {
                    top = Some((total, leaves));
                }
            }
            row.push(top);
        }
        best[t] = row;
    }

    // Walk down from the slack subsystem, fixing boundary values.
    let n = net.len();
    let mut mags = vec![0.0; n];
    let mut angles = vec![0.0; n];
    let mut root_choice = vec![0usize; m];
    let mut subsystem_hc = vec![0.0; m];
    let mut stage = Stage::VoltageOnly;
    let mut construction = Construction::Pattern;
    if best[0].first().and_then(|b| b.as_ref()).is_none() {
        return Err(Error::Verification("no feasible boundary assignment".into()));
    }
    for t in 0..m {
        let s = &p.subsystems[t];
        let r = root_choice[t];
        let (_, leaves) = best[t][r].clone().ok_or_else(|| Error::Verification("no feasible boundary assignment".into()))?;
        let piece = &table[&(t, r, leaves.clone())];
        let offset = angles[s.root];
        for (l, &g) in pieces[t].global.iter().enumerate() {
            mags[g] = piece.state.magnitudes[l];
            angles[g] = offset + piece.state.angles[l] - piece.state.angles[0];
        }
        for (&leaf, &k) in s.leaf_cuts.iter().zip(&leaves) {
            root_choice[child_of(leaf)] = k;
        }
        subsystem_hc[t] = piece.hc;
        stage = stage.max(piece.stage);
        if piece.construction != Construction::Pattern {
            construction = Construction::TreeSearch;
        }
    }
    let state = VoltageState { magnitudes: mags, angles };
    let (solution, bad) = hccore::assemble(net, c, state, stage, construction)?;
    let boundary = p.cut_buses.iter().map(|&i| (net.buses()[i].id, solution.state.magnitudes[i])).collect();
    if let Some(v) = bad.first() {
        let reason = format!("stitched state violates a constraint across the cuts ({v}); solved monolithically");
        log::warn!("{reason}");
        let solution = solve_hc(net, c)?;
        return Ok(DistributedSolution { subsystem_hc, solution, boundary, workers, fallback: Some(reason) });
    }
    Ok(DistributedSolution { solution, subsystem_hc, boundary, workers, fallback: None })
}
