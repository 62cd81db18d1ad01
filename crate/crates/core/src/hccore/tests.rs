use super::*;
use crate::fixtures;
use crate::netmodel::parse_case;

fn box_only() -> ConstraintSet {
    ConstraintSet::default()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn three_bus_voltage_only() {
    let net = fixtures::load("3bus").unwrap();
    let sol = solve_voltage_only(&net, &box_only()).unwrap();
    assert_eq!(sol.state.magnitudes, vec![1.0, 1.05, 0.95]);
    assert_eq!(sol.stage, Stage::VoltageOnly);
    assert_eq!(sol.construction, Construction::Pattern);
    assert!(close(sol.injections.p[1], 0.1575, 1e-12));
    assert!(close(sol.injections.p[2], -0.095, 1e-12));
    assert!(close(sol.hc_total, 0.0625, 1e-12));
}

#[test]
fn degenerate_box_gives_zero() {
    let net = fixtures::load("3bus").unwrap();
    let c = ConstraintSet::new(1.0, 1.0, 0.0, None).unwrap();
    let sol = solve_hc(&net, &c).unwrap();
    assert!(sol.state.magnitudes.iter().all(|&v| v == 1.0));
    assert!(sol.hc_total.abs() < 1e-15);
}

#[test]
fn zero_weights_give_zero() {
    let net = fixtures::load("8bus").unwrap();
    let net = net.with_lambdas(&vec![0.0; net.len()]).unwrap();
    let c = ConstraintSet { theta_max: 0.2, ..box_only() };
    assert_eq!(solve_hc(&net, &c).unwrap().hc_total, 0.0);
}

#[test]
fn critical_angle_values() {
    assert!(close(critical_angle(1.05, 0.95), 0.3098, 5e-4));
    assert_eq!(critical_angle(1.0, 1.0), 0.0);
    assert!(close(critical_angle(1.10, 0.90), (2.0f64 / 2.2).acos(), 1e-15));
    assert!(close(critical_angle(1.10, 0.90), 0.4297, 1e-4));
}

#[test]
fn large_angle_bound_lifts_every_bus() {
    let net = fixtures::load("3bus").unwrap();
    let c = ConstraintSet { theta_max: 0.5, ..box_only() };
    let sol = solve_with_angle(&net, &c).unwrap();
    assert_eq!(sol.stage, Stage::Angle);
    assert_eq!(sol.state.magnitudes, vec![1.0, 1.05, 1.05]);
    let a = &sol.state.angles;
    assert!(close((a[0] - a[1]).abs(), 0.5, 1e-15));
    assert!(close((a[1] - a[2]).abs(), 0.5, 1e-15));
    // positive sign at depth 1
    assert!(a[1] > 0.0);
}

#[test]
fn small_angle_bound_keeps_high_low() {
    let net = fixtures::load("3bus").unwrap();
    let c = ConstraintSet { theta_max: 0.1, ..box_only() };
    let sol = solve_with_angle(&net, &c).unwrap();
    assert_eq!(sol.state.magnitudes, vec![1.0, 1.05, 0.95]);
    assert_eq!(sol.state.angles, vec![0.0, 0.1, 0.0]);
}

#[test]
fn zero_angle_bound_reduces_to_voltage_only() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap();
        let a = solve_with_angle(&net, &box_only()).unwrap();
        let b = solve_voltage_only(&net, &box_only()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn branch_current_examples() {
    let net = fixtures::load("3bus").unwrap();
    let flat = VoltageState::flat(3);
    assert_eq!(branch_current(&net, &flat, 0).norm(), 0.0);
    let s = VoltageState::real(vec![1.0, 1.05, 0.95]);
    assert!(close(branch_current(&net, &s, 1).norm(), 0.10, 1e-12));
    let s = VoltageState::new(vec![1.0, 1.02, 0.97], vec![0.0, 0.07, -0.03]).unwrap();
    let (re, im) = s.rectangular();
    let rect = ((re[1] - re[2]).powi(2) + (im[1] - im[2]).powi(2)).sqrt();
    assert!(close(branch_current(&net, &s, 1).norm(), rect, 1e-12));
}

fn three_bus_with_limit(c: f64) -> Network {
    fixtures::load("3bus").unwrap().map_branches(|k, b| if k == 1 { b.thermal_limit = Some(c) }).unwrap()
}

#[test]
fn slack_thermal_limit_keeps_solution() {
    let net = three_bus_with_limit(0.15);
    let s1 = solve_with_angle(&net, &box_only()).unwrap();
    let s2 = adjust_thermal(&net, &box_only(), &s1).unwrap();
    assert_eq!(s1, s2);
}

#[test]
fn binding_thermal_limit_moves_far_end() {
    let net = three_bus_with_limit(0.08);
    let s1 = solve_with_angle(&net, &box_only()).unwrap();
    let s2 = adjust_thermal(&net, &box_only(), &s1).unwrap();
    assert_eq!(s2.stage, Stage::Thermal);
    assert!(close(s2.state.magnitudes[1], 1.05, 1e-12));
    assert!(close(s2.state.magnitudes[2], 0.97, 1e-12));
    let term = (s2.state.magnitudes[1] - s2.state.magnitudes[2]).powi(2);
    assert!(close(term, 0.0064, 1e-12));
    assert!(s2.hc_total <= s1.hc_total);
    assert!(max_thermal_ratio(&net, &s2.state) <= 1.0 + 1e-9);
}

#[test]
fn tiny_thermal_limit_forces_equal_magnitudes() {
    let net = three_bus_with_limit(1e-9);
    let sol = solve_hc(&net, &box_only()).unwrap();
    let v = &sol.state.magnitudes;
    assert!((v[1] - v[2]).abs() <= 1e-9);
    assert!(sol.hc_total < 0.0625);
}

#[test]
fn unreachable_limit_is_reported() {
    // a limit next to a slack held far outside the box
    let text = "BASE 1 1\nBUS 0 slack 0 0 0 1.3\nBUS 1 gen 0 0 1\nBRANCH 0 1 1 0 0.01\n";
    let net = parse_case(text).unwrap();
    let err = solve_hc(&net, &box_only()).unwrap_err();
    assert_eq!(err, Error::ThermalInfeasible { from: 0, to: 1 });
    assert!(err.is_infeasibility());
}

#[test]
fn thermal_optimum_beats_localised_repair() {
    // fixing the hotter end at v_max and pulling only the far end down
    // gives 0.0575; lifting bus 2 instead reaches 0.0625
    let net = fixtures::load("4bus_thermal").unwrap();
    let sol = solve_hc(&net, &box_only()).unwrap();
    assert_eq!(sol.stage, Stage::Thermal);
    assert!(close(sol.hc_total, 0.0625, 1e-12), "{}", sol.hc_total);
    let v = &sol.state.magnitudes;
    assert!(close(v[1], 1.05, 1e-12) && close(v[2], 1.05, 1e-12) && close(v[3], 0.95, 1e-12));
    let localised = weighted_hc(&net, &VoltageState::real(vec![1.0, 1.05, 1.0, 1.05]));
    assert!(close(localised, 0.0575, 1e-12));
}

#[test]
fn clamped_branch_reaches_loss_ceiling() {
    let net = fixtures::load("8bus").unwrap();
    let sol = solve_hc(&net, &box_only()).unwrap();
    assert!(sol.binding.contains(&Binding::Thermal { from: 3, to: 4 }));
    let br = &net.branches()[3];
    let y = br.admittance();
    let c = br.thermal_limit.unwrap();
    let dv = sol.state.phasor(br.from) - sol.state.phasor(br.to);
    assert!(close(y.re * dv.norm_sqr(), y.re * c * c / y.norm_sqr(), 1e-8));
}

#[test]
fn weighted_hc_definition() {
    let net = fixtures::load("8bus").unwrap();
    let mut lam = vec![0.0; 8];
    for i in [2, 5, 7] {
        lam[i] = 1.0;
    }
    let net = net.with_lambdas(&lam).unwrap();
    let s = VoltageState::new(
        vec![1.0, 1.01, 0.99, 1.02, 0.97, 1.03, 1.0, 0.98],
        vec![0.0, 0.01, -0.02, 0.0, 0.03, 0.01, 0.0, -0.01],
    )
    .unwrap();
    let inj = crate::powerflow::evaluate_injections(&net, &s).unwrap();
    assert!(close(weighted_hc(&net, &s), inj.p[2] + inj.p[5] + inj.p[7], 1e-15));
}

#[test]
fn indicator_weights_lift_weighted_buses() {
    let net = fixtures::load("8bus").unwrap();
    let mut lam = vec![0.0; 8];
    for i in [2, 5, 7] {
        lam[i] = 1.0;
    }
    let net = net.with_lambdas(&lam).unwrap().map_branches(|_, b| b.thermal_limit = None).unwrap();
    let sol = solve_hc(&net, &box_only()).unwrap();
    for i in [2, 5, 7] {
        assert_eq!(sol.state.magnitudes[i], 1.05, "bus {i}");
    }
}

#[test]
fn scaling_weights_scales_objective_only() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap();
        let c = ConstraintSet { theta_max: 0.1, ..box_only() };
        let base = solve_hc(&net, &c).unwrap();
        let scaled_net = net.with_lambdas(&net.lambdas().iter().map(|l| l * 3.5).collect::<Vec<_>>()).unwrap();
        let scaled = solve_hc(&scaled_net, &c).unwrap();
        assert_eq!(base.state, scaled.state, "{name}");
        assert!(close(scaled.hc_total, 3.5 * base.hc_total, 1e-10 * base.hc_total.abs().max(1.0)), "{name}");
    }
}

#[test]
fn hc_total_matches_weighted_injections() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap();
        let sol = solve_hc(&net, &ConstraintSet { theta_max: 0.05, ..box_only() }).unwrap();
        let direct: f64 = net.buses().iter().zip(&sol.injections.p).map(|(b, p)| b.lambda * p).sum();
        assert!(close(sol.hc_total, direct, 1e-10), "{name}");
    }
}

#[test]
fn positive_transfer_conductance_is_refused() {
    // negative resistance would flip the sign of G_ik; build it by hand
    let net = parse_case("BASE 1 1\nBUS 0 slack 0 0 0\nBUS 1 gen 0 0 1\nBRANCH 0 1 1 0\n").unwrap();
    let mut br = net.branches()[0].clone();
    br.r = -1.0;
    assert!(Network::new(1.0, 1.0, net.buses().to_vec(), vec![br]).is_err());
}

#[test]
fn power_factor_stage_is_identity_when_compliant() {
    let net = fixtures::load("3bus").unwrap();
    let c = ConstraintSet { eta: Some(0.95), ..box_only() };
    let s1 = solve_with_angle(&net, &c).unwrap();
    assert_eq!(adjust_power_factor(&net, &c, &s1).unwrap(), s1);
}

#[test]
fn power_factor_repair_on_eight_bus() {
    let net = fixtures::load("8bus").unwrap();
    let plain = solve_hc(&net, &box_only()).unwrap();
    let worst = min_generator_pf(&net, &plain.injections);
    assert!(worst < 0.95, "fixture should start below the floor, got {worst}");
    for eta in [0.90, 0.95, 0.98, 1.0] {
        let c = ConstraintSet { eta: Some(eta), ..box_only() };
        let sol = solve_hc(&net, &c).unwrap();
        assert!(min_generator_pf(&net, &sol.injections) >= eta - 1e-6, "eta {eta}");
        assert!(sol.hc_total <= plain.hc_total + 1e-12);
    }
}

#[test]
fn invalid_constraints_are_rejected() {
    assert!(ConstraintSet::new(1.1, 1.0, 0.0, None).is_err());
    assert!(ConstraintSet::new(0.9, 1.1, -0.1, None).is_err());
    assert!(ConstraintSet::new(0.9, 1.1, 0.0, Some(0.0)).is_err());
    assert!(ConstraintSet::new(0.9, 1.1, 0.0, Some(1.2)).is_err());
    assert!(ConstraintSet::new(0.9, 1.1, 0.0, Some(1.0)).is_ok());
}
