mod common;

use hostcap::fixtures;
use hostcap::hccore::{
    adjust_thermal, critical_angle, max_thermal_ratio, min_generator_pf, solve_hc, solve_voltage_only, solve_with_angle, weighted_hc,
    ConstraintSet,
};
use hostcap::netmodel::Network;
use hostcap::powerflow::VoltageState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn resistive_shunt_free(net: &Network) -> bool {
    net.branches().iter().all(|b| b.x == 0.0) && net.buses().iter().all(|b| b.shunt.norm() == 0.0)
}

fn unit_weights(net: &Network) -> Network {
    let lambdas: Vec<f64> = (0..net.len()).map(|i| if i == net.slack() { 0.0 } else { 1.0 }).collect();
    net.with_lambdas(&lambdas).unwrap()
}

/// Counts samples that beat the pattern and samples it strictly beats.
fn dominance(net: &Network, c: &ConstraintSet, samples: usize, seed: u64) -> (usize, usize) {
    let hc = solve_voltage_only(net, c).unwrap().hc_total;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut beaten, mut strict) = (0, 0);
    for _ in 0..samples {
        let s = common::random_state(&mut rng, net.len(), net.slack(), c.v_min, c.v_max, 0.0);
        let v = weighted_hc(net, &s);
        if v > hc + 1e-12 {
            beaten += 1;
        }
        if v < hc - 1e-12 {
            strict += 1;
        }
    }
    (beaten, strict)
}

#[test]
fn voltage_pattern_beats_random_assignments_on_resistive_fixtures() {
    let c = ConstraintSet::default();
    let mut checked = 0;
    for (name, _) in fixtures::ALL {
        let net = unit_weights(&fixtures::load(name).unwrap());
        if !resistive_shunt_free(&net) {
            continue;
        }
        let (beaten, strict) = dominance(&net, &c, 10_000, 11);
        assert_eq!(beaten, 0, "{name}");
        assert!(strict > 0, "{name}");
        checked += 1;
    }
    assert!(checked >= 4);
}

#[test]
fn five_bus_chain_beats_random_assignments() {
    let net = fixtures::load("5bus_chain").unwrap();
    assert_eq!(dominance(&net, &ConstraintSet::default(), 10_000, 5).0, 0);
}

#[test]
fn pattern_switches_at_the_critical_angle() {
    // Branch term a² + b² − 2ab cos θ for the all-high and high-low patterns.
    let (hi, lo) = (1.05f64, 0.95f64);
    let term = |a: f64, b: f64, t: f64| a * a + b * b - 2.0 * a * b * t.cos();
    let tc = critical_angle(hi, lo);
    assert!(term(hi, lo, tc - 1e-3) > term(hi, hi, tc - 1e-3));
    assert!(term(hi, hi, tc + 1e-3) > term(hi, lo, tc + 1e-3));

    let net = fixtures::load("3bus").unwrap();
    let at = |t: f64| solve_with_angle(&net, &ConstraintSet { theta_max: t, ..ConstraintSet::default() }).unwrap().state.magnitudes[2];
    assert_eq!(at(tc - 1e-3), lo);
    assert_eq!(at(tc + 1e-3), hi);
}

#[test]
fn angle_free_solution_is_the_voltage_only_one() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap();
        let c = ConstraintSet::default();
        assert_eq!(solve_with_angle(&net, &c).unwrap(), solve_voltage_only(&net, &c).unwrap(), "{name}");
    }
}

#[test]
fn thermal_stage_respects_every_limit() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap();
        for theta in [0.0, 0.1, 0.2, 0.5] {
            let c = ConstraintSet { theta_max: theta, ..ConstraintSet::from_case(&net.defaults) };
            let s1 = solve_with_angle(&net, &c).unwrap();
            let s2 = adjust_thermal(&net, &c, &s1).unwrap();
            assert!(max_thermal_ratio(&net, &s2.state) <= 1.0 + 1e-9, "{name} theta {theta}");
            assert!(s2.hc_total <= s1.hc_total + 1e-12);
        }
    }
}

#[test]
fn power_factor_floor_holds_on_small_fixtures() {
    for (name, _) in fixtures::ALL {
        if matches!(*name, "8bus" | "123bus") {
            continue;
        }
        let net = fixtures::load(name).unwrap();
        for eta in [0.9, 0.95] {
            let c = ConstraintSet { eta: Some(eta), theta_max: 0.2, ..ConstraintSet::from_case(&net.defaults) };
            let sol = solve_hc(&net, &c).unwrap();
            assert!(min_generator_pf(&net, &sol.injections) >= eta - 1e-6, "{name} eta {eta}");
        }
    }
}

fn with_limits(net: &Network, limits: &[Option<f64>]) -> Network {
    net.map_branches(|k, b| b.thermal_limit = limits[k % limits.len()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_weights_scales_only_the_objective(spec in common::tree_spec(7, false, false), s in 0.1..10.0f64, theta in 0.0..0.6f64) {
        let net = spec.build();
        let scaled = net.with_lambdas(&net.lambdas().iter().map(|l| l * s).collect::<Vec<_>>()).unwrap();
        let c = ConstraintSet { theta_max: theta, ..ConstraintSet::default() };
        let a = solve_hc(&net, &c).unwrap();
        let b = solve_hc(&scaled, &c).unwrap();
        prop_assert!((b.hc_total - s * a.hc_total).abs() <= 1e-10 * (1.0 + b.hc_total.abs()));
        prop_assert_eq!(a.state, b.state);
    }

    #[test]
    fn pattern_dominates_samples_on_random_resistive_trees(spec in common::tree_spec(7, true, false), seed in any::<u64>()) {
        let net = unit_weights(&spec.build());
        let (beaten, _) = dominance(&net, &ConstraintSet::default(), 500, seed);
        prop_assert_eq!(beaten, 0);
    }

    #[test]
    fn full_pipeline_is_feasible_on_random_trees(
        spec in common::tree_spec(6, false, false),
        limits in prop::collection::vec(prop::option::of(0.01..0.2f64), 1..4),
        theta in 0.0..0.4f64,
    ) {
        let net = with_limits(&spec.build(), &limits);
        let c = ConstraintSet { theta_max: theta, ..ConstraintSet::default() };
        match solve_hc(&net, &c) {
            Ok(sol) => {
                prop_assert!(max_thermal_ratio(&net, &sol.state) <= 1.0 + 1e-9);
                prop_assert!(hostcap::hccore::verify(&net, &c, &sol.state).unwrap().is_empty());
            }
            Err(e) => prop_assert!(e.is_infeasibility(), "{e}"),
        }
    }

    #[test]
    fn tightening_the_box_never_raises_capacity(spec in common::tree_spec(6, false, false), shrink in 0.0..0.04f64, theta in 0.0..0.4f64) {
        let net = spec.build();
        let wide = ConstraintSet { theta_max: theta, ..ConstraintSet::default() };
        let narrow = ConstraintSet { v_max: wide.v_max - shrink, ..wide.clone() };
        let a = solve_hc(&net, &wide).unwrap().hc_total;
        let b = solve_hc(&net, &narrow).unwrap().hc_total;
        prop_assert!(b <= a + 1e-9 * (1.0 + a.abs()));
    }
}

#[test]
fn random_feasible_states_never_beat_the_pipeline_with_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for name in ["4bus_complex", "6bus_branched", "5bus_star"] {
        let net = fixtures::load(name).unwrap();
        let c = ConstraintSet { theta_max: 0.1, ..ConstraintSet::from_case(&net.defaults) };
        let hc = solve_hc(&net, &c).unwrap().hc_total;
        for _ in 0..2000 {
            let n = net.len();
            let magnitudes = (0..n).map(|i| if i == net.slack() { 1.0 } else { rng.gen_range(c.v_min..=c.v_max) }).collect();
            // Angles built along the tree so every branch stays within the bound.
            let tree = net.radial_tree().unwrap();
            let mut angles = vec![0.0; n];
            for &i in &tree.order {
                if let Some(p) = tree.parent[i] {
                    angles[i] = angles[p] + rng.gen_range(-c.theta_max..=c.theta_max);
                }
            }
            let s = VoltageState { magnitudes, angles };
            assert!(weighted_hc(&net, &s) <= hc + 1e-12, "{name}");
        }
    }
}
