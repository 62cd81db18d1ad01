use hostcap::fixtures;
use hostcap::hccore::{min_generator_pf, solve_hc, verify, ConstraintSet};
use hostcap::netmodel::Network;
use hostcap::partition::{make_partition, solve_distributed_hc, subsystem_network};
use hostcap::powerflow::{quadratic_form_total, VoltageState};
use hostcap::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn defaults(net: &Network) -> ConstraintSet {
    ConstraintSet::from_case(&net.defaults)
}

fn ids(net: &Network, idx: &[usize]) -> Vec<i64> {
    idx.iter().map(|&i| net.buses()[i].id).collect()
}

#[test]
fn eight_bus_splits_into_two_pieces() {
    let net = fixtures::load("8bus").unwrap();
    let p = make_partition(&net, &[4]).unwrap();
    assert_eq!(p.subsystems.len(), 2);
    assert_eq!(p.parent, vec![None, Some(0)]);
    let (top, bottom) = (&p.subsystems[0], &p.subsystems[1]);
    assert_eq!(ids(&net, &top.buses), vec![0, 1, 2, 3, 4]);
    assert_eq!(ids(&net, &bottom.buses), vec![4, 5, 6, 7]);
    assert_eq!(top.leaf_cuts, vec![net.index_of(4).unwrap()]);
    assert!(top.is_coupling(net.index_of(4).unwrap(), &p));
    assert!(!top.is_coupling(net.index_of(3).unwrap(), &p));
    // Every branch is owned exactly once.
    let mut owned: Vec<usize> = p.subsystems.iter().flat_map(|s| s.branches.clone()).collect();
    owned.sort();
    assert_eq!(owned, (0..net.branches().len()).collect::<Vec<_>>());
}

#[test]
fn cuts_are_sorted_into_tree_order() {
    let net = fixtures::load("123bus").unwrap();
    let a = make_partition(&net, &[73, 16]).unwrap();
    let b = make_partition(&net, &[16, 73]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.subsystems.len(), 3);
    let total: usize = a.subsystems.iter().map(|s| s.buses.len()).sum();
    assert_eq!(total, net.len() + 2);
}

#[test]
fn bad_cuts_are_rejected() {
    let net = fixtures::load("8bus").unwrap();
    for cuts in [vec![99], vec![0], vec![7], vec![4, 4]] {
        let err = make_partition(&net, &cuts).unwrap_err();
        assert!(matches!(err, Error::InvalidPartition(_)), "{cuts:?}: {err}");
    }
}

#[test]
fn no_cuts_is_the_monolithic_solve() {
    let net = fixtures::load("8bus").unwrap();
    let c = defaults(&net);
    let p = make_partition(&net, &[]).unwrap();
    let d = solve_distributed_hc(&net, &c, &p, 3).unwrap();
    assert_eq!(d.solution, solve_hc(&net, &c).unwrap());
    assert!(d.fallback.is_none());
}

fn check_equivalence(name: &str, cuts: &[i64], c: Option<ConstraintSet>) {
    let net = fixtures::load(name).unwrap();
    let c = c.unwrap_or_else(|| defaults(&net));
    let mono = solve_hc(&net, &c).unwrap().hc_total;
    let p = make_partition(&net, cuts).unwrap();
    let mut first = None;
    for workers in [1, 2, 4, 8] {
        let d = solve_distributed_hc(&net, &c, &p, workers).unwrap();
        assert_eq!(d.workers, workers);
        assert!(d.fallback.is_none(), "{name} {cuts:?}: {:?}", d.fallback);
        assert!((d.solution.hc_total - mono).abs() <= 1e-8, "{name} {cuts:?}: {} vs {mono}", d.solution.hc_total);
        let parts: f64 = d.subsystem_hc.iter().sum();
        assert!((parts - d.solution.hc_total).abs() <= 1e-9 * (1.0 + mono.abs()));
        assert!(verify(&net, &c, &d.solution.state).unwrap().is_empty());
        match &first {
            None => first = Some(d.solution),
            Some(s) => assert_eq!(s, &d.solution, "{name} {cuts:?} differs at {workers} workers"),
        }
    }
}

#[test]
fn eight_bus_pieces_reproduce_the_whole() {
    check_equivalence("8bus", &[4], None);
    check_equivalence("8bus", &[2, 4], None);
}

#[test]
fn large_feeder_pieces_reproduce_the_whole() {
    check_equivalence("123bus", &[16, 73], None);
}

#[test]
fn pieces_reproduce_the_whole_with_angles() {
    let net = fixtures::load("6bus_branched").unwrap();
    for theta in [0.1, 0.3] {
        check_equivalence("6bus_branched", &[1], Some(ConstraintSet { theta_max: theta, ..defaults(&net) }));
    }
}

#[test]
fn power_factor_floor_is_respected() {
    for (name, cuts) in [("8bus", vec![4]), ("6bus_branched", vec![1])] {
        let net = fixtures::load(name).unwrap();
        let c = ConstraintSet { eta: Some(0.95), ..defaults(&net) };
        let mono = solve_hc(&net, &c).unwrap();
        let d = solve_distributed_hc(&net, &c, &make_partition(&net, &cuts).unwrap(), 2).unwrap();
        assert!(min_generator_pf(&net, &d.solution.injections) >= 0.95 - 1e-6, "{name}");
        if d.fallback.is_some() {
            assert_eq!(d.solution, mono);
        } else {
            assert!((d.solution.hc_total - mono.hc_total).abs() <= 1e-8, "{name}");
        }
    }
}

fn splittable(net: &Network) -> Vec<i64> {
    let tree = net.radial_tree().unwrap();
    (0..net.len()).filter(|&i| i != net.slack() && !tree.is_leaf(i)).map(|i| net.buses()[i].id).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subsystem_quadratic_forms_add_up(
        name in prop::sample::select(vec!["5bus_chain", "6bus_branched", "8bus", "123bus"]),
        mask in any::<u8>(),
        seed in any::<u64>(),
    ) {
        let net = fixtures::load(name).unwrap();
        let cuts: Vec<i64> = splittable(&net).into_iter().enumerate().filter(|(k, _)| mask >> (k % 8) & 1 == 1).map(|(_, id)| id).collect();
        let p = make_partition(&net, &cuts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = VoltageState {
            magnitudes: (0..net.len()).map(|_| rng.gen_range(0.9..1.1)).collect(),
            angles: (0..net.len()).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        };
        let whole = quadratic_form_total(&net, &s).unwrap();
        let mut parts = 0.0;
        for sub in &p.subsystems {
            let piece = subsystem_network(&net, sub).unwrap();
            let local = VoltageState {
                magnitudes: sub.buses.iter().map(|&i| s.magnitudes[i]).collect(),
                angles: sub.buses.iter().map(|&i| s.angles[i]).collect(),
            };
            parts += quadratic_form_total(&piece, &local).unwrap();
        }
        prop_assert!((parts - whole).abs() <= 1e-10 * (1.0 + whole.abs()), "{} vs {}", parts, whole);
    }

    #[test]
    fn any_cut_set_reproduces_the_whole(
        name in prop::sample::select(vec!["4bus_weighted", "4bus_thermal", "5bus_chain", "6bus_branched", "8bus"]),
        mask in any::<u8>(),
        theta in prop::sample::select(vec![0.0, 0.1, 0.3]),
        workers in 1..5usize,
    ) {
        let net = fixtures::load(name).unwrap();
        let cuts: Vec<i64> = splittable(&net).into_iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, id)| id).collect();
        let c = ConstraintSet { theta_max: theta, ..defaults(&net) };
        let mono = solve_hc(&net, &c).unwrap().hc_total;
        let d = solve_distributed_hc(&net, &c, &make_partition(&net, &cuts).unwrap(), workers).unwrap();
        prop_assert!((d.solution.hc_total - mono).abs() <= 1e-8, "{} {:?}: {} vs {}", name, cuts, d.solution.hc_total, mono);
        prop_assert!(verify(&net, &c, &d.solution.state).unwrap().is_empty());
    }
}
