mod common;

use hostcap::fixtures;
use hostcap::netmodel::{parse_case, serialize_case, Parity};
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn eight_bus_fixture_shape() {
    let net = fixtures::load("8bus").unwrap();
    assert_eq!(net.len(), 8);
    assert_eq!(net.branches().len(), 7);
    let y = net.ybus();
    for i in 0..8 {
        let row: Complex64 = (0..8).map(|k| y[(i, k)]).sum();
        assert!(row.norm() < 1e-12, "row {i} sums to {row}");
    }
}

#[test]
fn every_fixture_round_trips() {
    for (name, text) in fixtures::ALL {
        let net = parse_case(text).unwrap();
        let again = parse_case(&serialize_case(&net)).unwrap();
        assert_eq!(net, again, "{name}");
    }
}

#[test]
fn every_fixture_is_two_coloured() {
    for (name, _) in fixtures::ALL {
        let net = fixtures::load(name).unwrap().assign_parity().unwrap();
        for br in net.branches() {
            let (a, b) = (net.buses()[br.from].parity, net.buses()[br.to].parity);
            assert_ne!(a, b, "{name}: branch {}-{}", br.from, br.to);
        }
        assert_eq!(net.buses()[net.slack()].parity, Some(Parity::Even));
    }
}

proptest! {
    #[test]
    fn ybus_is_symmetric_and_rows_sum_to_shunts(spec in common::tree_spec(9, false, true)) {
        let net = spec.build();
        let y = net.ybus();
        let n = net.len();
        for i in 0..n {
            for k in 0..n {
                prop_assert!((y[(i, k)] - y[(k, i)]).norm() < 1e-12);
            }
            let row: Complex64 = (0..n).map(|k| y[(i, k)]).sum();
            prop_assert!((row - net.buses()[i].shunt).norm() < 1e-12);
        }
    }

    #[test]
    fn parity_is_a_proper_colouring(spec in common::tree_spec(12, false, false)) {
        let net = spec.build().assign_parity().unwrap();
        for br in net.branches() {
            prop_assert_ne!(net.buses()[br.from].parity, net.buses()[br.to].parity);
        }
    }

    #[test]
    fn serialisation_round_trips(spec in common::tree_spec(9, false, true)) {
        let net = spec.build();
        let again = parse_case(&serialize_case(&net)).unwrap();
        prop_assert_eq!(net, again);
    }
}
