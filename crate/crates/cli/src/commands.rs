//! Command implementations.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use hostcap::hccore::ConstraintSet;
use hostcap::netmodel::{parse_case, CaseConstraints, Network};
use hostcap::oracle::{grid_search_hc, incremental_screening, pv_curve_surface, GridSpec, ScreeningStatus, Surface};
use hostcap::partition::{make_partition, solve_distributed_hc};
use hostcap::sequence::{parse_case3, solve_unbalanced_hc, UnbalancedOptions};
use hostcap::solve_hc;

use crate::report::{BoundaryValue, Input, OracleReport, PartitionReport, PhaseResult, RunReport, Timings, UnbalancedReport};
use crate::args::{Cli, Command, ConstraintFlags, Format, PartitionFlags};

/// 2 for "no feasible operating point", 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<hostcap::Error>() {
        Some(err) if err.is_infeasibility() => 2,
        _ => 1,
    }
}

/// Case-file defaults, then built-in defaults, overridden by flags.
fn constraints(defaults: &CaseConstraints, flags: &ConstraintFlags) -> Result<ConstraintSet> {
    let base = ConstraintSet::from_case(defaults);
    let c = ConstraintSet {
        v_min: flags.vmin.unwrap_or(base.v_min),
        v_max: flags.vmax.unwrap_or(base.v_max),
        theta_max: flags.theta_max.unwrap_or(base.theta_max),
        eta: flags.eta.or(base.eta),
    };
    c.validate()?;
    Ok(c)
}

fn read(path: &Path) -> Result<(String, Input)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let input = Input::new(&path.display().to_string(), &bytes);
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    Ok((text, input))
}

fn load(path: &Path) -> Result<(Network, Input)> {
    let (text, input) = read(path)?;
    let net = parse_case(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok((net, input))
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn partition_report(flags: &PartitionFlags, d: hostcap::partition::DistributedSolution) -> PartitionReport {
    PartitionReport {
        cuts: flags.cut.clone(),
        workers: d.workers,
        subsystem_hc: d.subsystem_hc,
        boundary: d.boundary.into_iter().map(|(bus, v)| BoundaryValue { bus, v }).collect(),
        fallback: d.fallback,
        hc_monolithic: None,
    }
}

fn cmd_solve(cli: &Cli, case: &Path, flags: &ConstraintFlags, part: &PartitionFlags) -> Result<RunReport> {
    let start = Instant::now();
    let (net, input) = load(case)?;
    let c = constraints(&net.defaults, flags)?;
    if part.cut.is_empty() {
        let sol = solve_hc(&net, &c)?;
        let mut report = RunReport::new("solve", input, c, &net, &sol);
        if cli.timings {
            report.timings = Some(Timings { total_ms: ms(start), monolithic_ms: None, distributed_ms: None, workers: None });
        }
        return Ok(report);
    }
    let p = make_partition(&net, &part.cut)?;
    let workers = part.workers.unwrap_or(p.subsystems.len());
    let t = Instant::now();
    let d = solve_distributed_hc(&net, &c, &p, workers)?;
    let distributed_ms = ms(t);
    let mut report = RunReport::new("solve", input, c, &net, &d.solution);
    report.partition = Some(partition_report(part, d));
    if cli.timings {
        report.timings = Some(Timings { total_ms: ms(start), monolithic_ms: None, distributed_ms: Some(distributed_ms), workers: Some(workers) });
    }
    Ok(report)
}

fn cmd_partition_bench(case: &Path, flags: &ConstraintFlags, part: &PartitionFlags) -> Result<RunReport> {
    let start = Instant::now();
    let (net, input) = load(case)?;
    let c = constraints(&net.defaults, flags)?;
    let p = make_partition(&net, &part.cut)?;
    let workers = part.workers.unwrap_or(p.subsystems.len());
    let t = Instant::now();
    let mono = solve_hc(&net, &c)?;
    let monolithic_ms = ms(t);
    let t = Instant::now();
    let d = solve_distributed_hc(&net, &c, &p, workers)?;
    let distributed_ms = ms(t);
    let mut report = RunReport::new("partition-bench", input, c, &net, &d.solution);
    let mut pr = partition_report(part, d);
    pr.hc_monolithic = Some(mono.hc_total);
    report.partition = Some(pr);
    report.timings = Some(Timings {
        total_ms: ms(start),
        monolithic_ms: Some(monolithic_ms),
        distributed_ms: Some(distributed_ms),
        workers: Some(workers),
    });
    Ok(report)
}

fn write_surface(surface: &Surface, dir: &Path) -> Result<(String, String)> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let surface_path = dir.join("surface.csv");
    let pairs_path = dir.join("pairs.csv");
    let mut s = csv::Writer::from_path(&surface_path)?;
    s.write_record(["v1_pu", "v2_pu", "p_sum_pu", "feasible"])?;
    let mut p = csv::Writer::from_path(&pairs_path)?;
    p.write_record(["v1_pu", "v2_pu", "p1_pu", "p2_pu", "feasible", "maximizer"])?;
    for (k, r) in surface.rows.iter().enumerate() {
        s.serialize((r.v1, r.v2, r.p_sum, r.feasible))?;
        p.serialize((r.v1, r.v2, r.p1, r.p2, r.feasible, surface.maximizer == Some(k)))?;
    }
    s.flush()?;
    p.flush()?;
    Ok((surface_path.display().to_string(), pairs_path.display().to_string()))
}

fn cmd_oracle(
    cli: &Cli,
    case: &Path,
    flags: &ConstraintFlags,
    grid_steps: usize,
    angle_steps: usize,
    out_dir: &Path,
) -> Result<RunReport> {
    let start = Instant::now();
    let (net, input) = load(case)?;
    let c = constraints(&net.defaults, flags)?;
    let spec = GridSpec::new(grid_steps, angle_steps);
    let surface = pv_curve_surface(&net, &c, &spec)?;
    let sol = solve_hc(&net, &c)?;
    let g = grid_search_hc(&net, &c, &spec)?;
    let (surface_csv, pairs_csv) = write_surface(&surface, out_dir)?;
    let mut report = RunReport::new("oracle", input, c, &net, &sol);
    report.oracle = Some(OracleReport {
        hc_oracle: g.hc_total,
        hc_theorem: sol.hc_total,
        eps_grid: g.eps_grid,
        agreement: (g.hc_total - sol.hc_total).abs() <= g.eps_grid,
        magnitude_steps: grid_steps,
        angle_steps,
        points: g.points,
        exhaustive: g.exhaustive,
        surface_buses: surface.buses,
        surface_csv,
        pairs_csv,
    });
    if cli.timings {
        report.timings = Some(Timings { total_ms: ms(start), monolithic_ms: None, distributed_ms: None, workers: None });
    }
    Ok(report)
}

fn cmd_unbalanced(cli: &Cli, case: &Path, flags: &ConstraintFlags, opts: UnbalancedOptions) -> Result<RunReport> {
    let start = Instant::now();
    let (text, input) = read(case)?;
    let net = parse_case3(&text).with_context(|| format!("cannot parse {}", case.display()))?;
    let c = constraints(&net.defaults, flags)?;
    let sol = solve_unbalanced_hc(&net, &c, &opts)?;
    let pos = net.positive_sequence()?;
    let mut report = RunReport::new("unbalanced", input, c, &pos, &sol.positive);
    report.unbalanced = Some(UnbalancedReport {
        scenario: serde_json::to_value(sol.scenario)?.as_str().unwrap_or_default().to_string(),
        method: sol.method.clone(),
        coupling_rel: sol.coupling_rel,
        hc_per_phase: sol.hc_per_phase,
        hc_total: sol.hc_total,
        phases: net
            .buses
            .iter()
            .zip(&sol.phase_voltages)
            .map(|(b, v)| {
                let [va, vb, vc] = v.magnitudes();
                PhaseResult { id: b.id, va, vb, vc }
            })
            .collect(),
        violations: sol.violations.clone(),
        floored: sol.floored.clone(),
    });
    for v in &sol.violations {
        log::warn!("bus {} phase {} magnitude {:.6} outside [{}, {}]", v.bus, ["a", "b", "c"][v.phase], v.magnitude, report.constraints.v_min, report.constraints.v_max);
    }
    if cli.timings {
        report.timings = Some(Timings { total_ms: ms(start), monolithic_ms: None, distributed_ms: None, workers: None });
    }
    Ok(report)
}

fn cmd_screen(cli: &Cli, case: &Path, flags: &ConstraintFlags, step: f64) -> Result<RunReport> {
    let start = Instant::now();
    let (net, input) = load(case)?;
    let c = constraints(&net.defaults, flags)?;
    let sol = solve_hc(&net, &c)?;
    let rows = incremental_screening(&net, &c, step)?;
    let mut report = RunReport::new("screen", input, c, &net, &sol);
    report.screening = Some(rows);
    if cli.timings {
        report.timings = Some(Timings { total_ms: ms(start), monolithic_ms: None, distributed_ms: None, workers: None });
    }
    Ok(report)
}

fn status_label(s: &ScreeningStatus) -> String {
    match s {
        ScreeningStatus::Violated { violation } => format!("violated: {violation}"),
        ScreeningStatus::BaseViolated { violation } => format!("base violated: {violation}"),
        ScreeningStatus::Diverged => "diverged".into(),
        ScreeningStatus::StepLimit => "step limit".into(),
    }
}

/// The command's main table as CSV.
fn to_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(rows) = &report.screening {
        w.write_record(["bus", "added_pu", "hc_total_pu", "steps", "status"])?;
        for r in rows {
            w.serialize((r.bus, r.added, r.hc_total, r.steps, status_label(&r.status)))?;
        }
    } else if let Some(u) = &report.unbalanced {
        w.write_record(["id", "va_pu", "vb_pu", "vc_pu"])?;
        for p in &u.phases {
            w.serialize((p.id, p.va, p.vb, p.vc))?;
        }
    } else {
        w.write_record(["id", "v_pu", "theta_rad", "p_pu", "q_pu"])?;
        for b in &report.buses {
            w.serialize((b.id, b.v, b.theta, b.p, b.q))?;
        }
    }
    Ok(w.into_inner()?)
}

pub fn run(cli: &Cli) -> Result<()> {
    let report = match &cli.command {
        Command::Solve { case, constraints, partition } => cmd_solve(cli, case, constraints, partition)?,
        Command::Oracle { case, constraints, grid_steps, angle_steps, out_dir } => {
            cmd_oracle(cli, case, constraints, *grid_steps, *angle_steps, out_dir)?
        }
        Command::Unbalanced { case, constraints, coupling_threshold, outer_iterations } => {
            let opts = UnbalancedOptions { coupling_threshold: *coupling_threshold, outer_iterations: *outer_iterations };
            cmd_unbalanced(cli, case, constraints, opts)?
        }
        Command::Screen { case, constraints, step } => cmd_screen(cli, case, constraints, *step)?,
        Command::PartitionBench { case, constraints, partition } => cmd_partition_bench(case, constraints, partition)?,
    };
    let bytes = match cli.format {
        Format::Json => {
            let mut b = serde_json::to_vec_pretty(&report)?;
            b.push(b'\n');
            b
        }
        Format::Csv => to_csv(&report)?,
    };
    match &cli.output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}
