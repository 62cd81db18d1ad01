use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hostcap::fixtures;
use hostcap::hccore::{solve_hc, ConstraintSet};
use hostcap_cli::report::RunReport;
use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

fn hostcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hostcap")).args(args).env("HOSTCAP_LOG", "off").output().unwrap()
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = hostcap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn report(args: &[&str]) -> RunReport {
    serde_json::from_slice(&ok(args)).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hostcap(args).status.code().unwrap()
}

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::draft202012::new(&schema).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, bytes: &[u8]) {
    let doc: Value = serde_json::from_slice(bytes).unwrap();
    let errors: Vec<String> = v.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn three_bus_solve() {
    let r = report(&["solve", &fixture("3bus.case")]);
    assert!((r.hc_total - 0.0625).abs() <= 1e-12);
    assert_eq!(r.final_stage, "theorem1");
    assert_eq!(r.buses.iter().map(|b| b.v).collect::<Vec<_>>(), vec![1.0, 1.05, 0.95]);
    assert_eq!(r.stages.len(), 1);
}

#[test]
fn degenerate_box_hosts_nothing() {
    let r = report(&["solve", &fixture("3bus.case"), "--vmin", "1", "--vmax", "1"]);
    assert!(r.hc_total.abs() <= 1e-12);
}

#[test]
fn flags_override_case_defaults() {
    let r = report(&["solve", &fixture("8bus.case"), "--theta-max", "0.2"]);
    assert_eq!(r.constraints.theta_max, 0.2);
    assert_eq!(r.constraints.v_min, ConstraintSet::from_case(&fixtures::load("8bus").unwrap().defaults).v_min);
}

#[test]
fn power_factor_run_with_cut_reports_every_stage() {
    let r = report(&["solve", &fixture("8bus.case"), "--eta", "0.95", "--cut", "4", "--timings"]);
    let stages: Vec<&str> = r.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages.last(), Some(&"pf-adjusted"));
    assert_eq!(r.final_stage, "pf-adjusted");
    let p = r.partition.unwrap();
    assert_eq!(p.cuts, vec![4]);
    let t = r.timings.unwrap();
    assert!(t.total_ms >= 0.0);
    assert!(t.distributed_ms.is_some());
}

#[test]
fn timings_only_on_request() {
    let r = report(&["solve", &fixture("3bus.case")]);
    assert!(r.timings.is_none());
    let r = report(&["partition-bench", &fixture("8bus.case"), "--cut", "4"]);
    let t = r.timings.unwrap();
    assert!(t.monolithic_ms.is_some() && t.distributed_ms.is_some());
    let p = r.partition.unwrap();
    assert_eq!(p.hc_monolithic.unwrap().to_bits(), r.hc_total.to_bits());
}

#[test]
fn oracle_writes_the_surface() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = report(&["oracle", &fixture("3bus.case"), "--out-dir", out]);
    let o = r.oracle.unwrap();
    assert!(o.agreement);
    assert!((o.hc_oracle - o.hc_theorem).abs() <= o.eps_grid);
    assert_eq!(o.surface_buses, [1, 2]);

    let mut pairs = csv::Reader::from_path(dir.path().join("pairs.csv")).unwrap();
    assert_eq!(pairs.headers().unwrap(), vec!["v1_pu", "v2_pu", "p1_pu", "p2_pu", "feasible", "maximizer"]);
    let rows: Vec<csv::StringRecord> = pairs.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 101 * 101);
    let best: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[5] == "true").collect();
    assert_eq!(best.len(), 1);
    let num = |k: usize| best[0][k].parse::<f64>().unwrap();
    assert!((num(0) - 1.05).abs() <= 1e-12 && (num(1) - 0.95).abs() <= 1e-12);
    assert!((num(2) - 0.1575).abs() <= 1e-9 && (num(3) + 0.095).abs() <= 1e-9);

    let surface = csv::Reader::from_path(dir.path().join("surface.csv")).unwrap().into_records().count();
    assert_eq!(surface, 101 * 101);
}

#[test]
fn oracle_surface_needs_two_free_buses() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["oracle", &fixture("8bus.case"), "--out-dir", dir.path().to_str().unwrap()]), 1);
}

#[test]
fn unbalanced_method_labels() {
    for (file, method) in [
        ("8bus_balanced.case3", "HC model"),
        ("8bus_untransposed.case3", "sequence line model"),
        ("8bus_unbalanced.case3", "sequence load current"),
    ] {
        let u = report(&["unbalanced", &fixture(file)]).unbalanced.unwrap();
        assert_eq!(u.method, method, "{file}");
        let sum: f64 = u.hc_per_phase.iter().sum();
        assert!((sum - u.hc_total).abs() <= 1e-9 * (1.0 + u.hc_total.abs()));
    }
}

#[test]
fn strong_coupling_exits_with_infeasibility() {
    assert_eq!(code(&["unbalanced", &fixture("8bus_untransposed.case3"), "--coupling-threshold", "0.001"]), 2);
}

#[test]
fn unreachable_thermal_limit_exits_with_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("tight.case");
    std::fs::write(&case, "BASE 1 0.4\nBUS 0 slack 0 0 0\nBUS 1 gen 0 0 1\nBRANCH 0 1 1 0 0.01\n").unwrap();
    let out = hostcap(&["solve", case.to_str().unwrap(), "--vmin", "1.02"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thermal"));
}

#[test]
fn input_errors_exit_with_one() {
    let missing = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("no-such.case");
    assert_eq!(code(&["solve", missing.to_str().unwrap()]), 1);
    assert_eq!(code(&["solve", &fixture("3bus.case"), "--vmin", "1.1", "--vmax", "1.0"]), 1);
    assert_eq!(code(&["solve", &fixture("8bus.case"), "--cut", "99"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.case");
    std::fs::write(&bad, "BUS 0 slack 0 0 0\nBRANCH 0 5 1 0\n").unwrap();
    assert_eq!(code(&["solve", bad.to_str().unwrap()]), 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let case = fixture("123bus.case");
    let args = ["solve", case.as_str(), "--cut", "16,73", "--workers", "1"];
    assert_eq!(ok(&args), ok(&args));
}

#[test]
fn worker_count_does_not_change_the_answer() {
    let case = fixture("123bus.case");
    let bits: Vec<u64> = ["1", "2", "4"]
        .iter()
        .map(|w| report(&["solve", &case, "--cut", "16,73", "--workers", w]).hc_total.to_bits())
        .collect();
    assert!(bits.windows(2).all(|w| w[0] == w[1]), "{bits:?}");
}

#[test]
fn report_reloads_exactly() {
    let bytes = ok(&["solve", &fixture("8bus.case"), "--theta-max", "0.1"]);
    let r: RunReport = serde_json::from_slice(&bytes).unwrap();
    let net = fixtures::load("8bus").unwrap();
    let c = ConstraintSet { theta_max: 0.1, ..ConstraintSet::from_case(&net.defaults) };
    assert_eq!(r.hc_total.to_bits(), solve_hc(&net, &c).unwrap().hc_total.to_bits());
    let mut again = serde_json::to_vec_pretty(&r).unwrap();
    again.push(b'\n');
    assert_eq!(again, bytes);
}

#[test]
fn every_report_matches_the_schema() {
    let v = validator();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (c3, c8, c123) = (fixture("3bus.case"), fixture("8bus.case"), fixture("123bus.case"));
    let (bal, unb) = (fixture("8bus_balanced.case3"), fixture("8bus_unbalanced.case3"));
    let runs: Vec<Vec<&str>> = vec![
        vec!["solve", &c3],
        vec!["solve", &c8, "--theta-max", "0.2", "--timings"],
        vec!["solve", &c8, "--eta", "0.95", "--cut", "4"],
        vec!["solve", &c123, "--cut", "16,73", "--timings"],
        vec!["partition-bench", &c123, "--cut", "16"],
        vec!["oracle", &c3, "--out-dir", out, "--timings"],
        vec!["unbalanced", &bal],
        vec!["unbalanced", &unb, "--timings"],
        vec!["screen", &c3],
        vec!["screen", &c8, "--step", "0.01"],
    ];
    for args in runs {
        assert_valid(&v, &ok(&args));
    }
}

#[test]
fn schema_rejects_a_broken_report() {
    let v = validator();
    let mut doc: Value = serde_json::from_slice(&ok(&["solve", &fixture("3bus.case")])).unwrap();
    doc["final_stage"] = Value::from("stage9");
    assert!(!v.is_valid(&doc));
    doc.as_object_mut().unwrap().remove("final_stage");
    assert!(!v.is_valid(&doc));
}

#[test]
fn csv_output() {
    let text = String::from_utf8(ok(&["--format", "csv", "solve", &fixture("3bus.case")])).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,v_pu,theta_rad,p_pu,q_pu"));
    assert_eq!(lines.count(), 3);

    let text = String::from_utf8(ok(&["--format", "csv", "screen", &fixture("3bus.case")])).unwrap();
    assert!(text.starts_with("bus,added_pu,hc_total_pu,steps,status\n"));

    let text = String::from_utf8(ok(&["--format", "csv", "unbalanced", &fixture("8bus_unbalanced.case3")])).unwrap();
    assert!(text.starts_with("id,va_pu,vb_pu,vc_pu\n"));
}

#[test]
fn output_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    assert!(ok(&["--output", path.to_str().unwrap(), "solve", &fixture("3bus.case")]).is_empty());
    let r: RunReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(r.command, "solve");
    assert_eq!(r.input.sha256.len(), 64);
}
