mod common;

use hostcap::fixtures;
use hostcap::powerflow::{
    evaluate_injections, polar_form_total, qv_sensitivity, quadratic_form_total, solve_newton, BusSpec, NewtonOptions, VoltageState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_states_match_term_by_term_sums() {
    let net = fixtures::load("8bus").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let s = common::random_state(&mut rng, net.len(), net.slack(), 0.9, 1.1, 0.3);
        let inj = evaluate_injections(&net, &s).unwrap();
        let p = common::active_power_by_terms(&net, &s);
        let q = common::reactive_power_by_terms(&net, &s);
        for i in 0..net.len() {
            assert!((inj.p[i] - p[i]).abs() < 1e-10);
            assert!((inj.q[i] - q[i]).abs() < 1e-10);
        }
    }
}

/// Converged point where every non-slack bus holds the injections of a
/// random state, so the sensitivity is taken at a genuine solution.
fn operating_point(net: &hostcap::Network, seed: u64) -> VoltageState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::random_state(&mut rng, net.len(), net.slack(), 0.97, 1.03, 0.02)
}

fn pq_spec(net: &hostcap::Network, s: &VoltageState, dq: Option<(usize, f64)>) -> Vec<BusSpec> {
    let inj = evaluate_injections(net, s).unwrap();
    (0..net.len())
        .map(|i| {
            if i == net.slack() {
                BusSpec::Slack { v: s.magnitudes[i], theta: 0.0 }
            } else {
                let extra = dq.filter(|(b, _)| *b == i).map_or(0.0, |(_, e)| e);
                BusSpec::Pq { p: inj.p[i], q: inj.q[i] + extra }
            }
        })
        .collect()
}

#[test]
fn sensitivity_matches_central_differences_on_every_fixture() {
    let eps = 1e-6;
    for (name, _) in fixtures::ALL {
        if *name == "123bus" {
            continue;
        }
        let net = fixtures::load(name).unwrap();
        let s = operating_point(&net, 3);
        let sens = qv_sensitivity(&net, &s).unwrap();
        let opts = NewtonOptions { tol: 1e-13, max_iter: 50, init: Some(s.clone()) };
        for k in net.free_buses() {
            let up = solve_newton(&net, &pq_spec(&net, &s, Some((k, eps))), &opts).unwrap();
            let dn = solve_newton(&net, &pq_spec(&net, &s, Some((k, -eps))), &opts).unwrap();
            for i in net.free_buses() {
                let fd = (up.magnitudes[i] - dn.magnitudes[i]) / (2.0 * eps);
                let scale = sens[(i, k)].abs().max(1e-3);
                assert!((fd - sens[(i, k)]).abs() / scale < 1e-4, "{name}: d|V{i}|/dQ{k} fd {fd} vs {}", sens[(i, k)]);
            }
        }
    }
}

#[test]
fn sensitivity_of_a_symmetric_network_is_symmetric() {
    let net = fixtures::load("6bus_branched").unwrap();
    let s = VoltageState::flat(net.len());
    let sens = qv_sensitivity(&net, &s).unwrap();
    for i in 0..net.len() {
        for k in 0..net.len() {
            assert!((sens[(i, k)] - sens[(k, i)]).abs() < 1e-8);
        }
    }
}

proptest! {
    #[test]
    fn total_injection_equals_both_quadratic_forms(spec in common::tree_spec(9, false, false), seed in any::<u64>()) {
        let net = spec.build();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_state(&mut rng, net.len(), net.slack(), 0.9, 1.1, 1.0);
        let total: f64 = evaluate_injections(&net, &s).unwrap().p.iter().sum();
        prop_assert!((total - quadratic_form_total(&net, &s).unwrap()).abs() < 1e-10);
        prop_assert!((total - polar_form_total(&net, &s).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn newton_solutions_reproduce_their_specification(spec in common::tree_spec(8, false, false), seed in any::<u64>()) {
        let net = spec.build();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = common::random_state(&mut rng, net.len(), net.slack(), 0.98, 1.02, 0.01);
        let bus_spec = pq_spec(&net, &target, None);
        let s = solve_newton(&net, &bus_spec, &NewtonOptions::default()).unwrap();
        let inj = evaluate_injections(&net, &s).unwrap();
        for (i, sp) in bus_spec.iter().enumerate() {
            if let BusSpec::Pq { p, q } = sp {
                prop_assert!((inj.p[i] - p).abs() < 1e-8 && (inj.q[i] - q).abs() < 1e-8);
            }
        }
    }
}
