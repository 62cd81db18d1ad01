#![allow(dead_code)]

use hostcap::netmodel::{Branch, Bus, BusKind, Network};
use hostcap::powerflow::VoltageState;
use num_complex::Complex64;
use proptest::prelude::*;

/// Raw description of a random radial feeder.
#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub parents: Vec<usize>,
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub shunt: Vec<(f64, f64)>,
}

impl TreeSpec {
    pub fn build(&self) -> Network {
        let n = self.parents.len() + 1;
        let buses = (0..n)
            .map(|i| {
                let mut b = Bus::new(i as i64, if i == 0 { BusKind::Slack } else { BusKind::Generator });
                if i > 0 {
                    b.lambda = self.lambda[i - 1];
                }
                b.shunt = Complex64::new(self.shunt[i].0, self.shunt[i].1);
                b
            })
            .collect();
        let branches = self.parents.iter().enumerate().map(|(k, &p)| Branch::new(p, k + 1, self.r[k], self.x[k])).collect();
        Network::new(1.0, 1.0, buses, branches).unwrap()
    }
}

/// Trees of 2..=max_n buses with bus i hanging from some bus below i.
pub fn tree_spec(max_n: usize, resistive: bool, shunts: bool) -> impl Strategy<Value = TreeSpec> {
    (1..max_n).prop_flat_map(move |m| {
        let parents: Vec<_> = (0..m).map(|k| 0..=k).collect();
        let x = if resistive { prop::collection::vec(Just(0.0), m).boxed() } else { prop::collection::vec(0.0..1.0f64, m).boxed() };
        let shunt = if shunts {
            prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64), m + 1).boxed()
        } else {
            prop::collection::vec(Just((0.0, 0.0)), m + 1).boxed()
        };
        (parents, prop::collection::vec(0.05..2.0f64, m), x, prop::collection::vec(0.0..2.0f64, m), shunt)
            .prop_map(|(parents, r, x, lambda, shunt)| TreeSpec { parents, r, x, lambda, shunt })
    })
}

/// Random state with magnitudes in [lo, hi] and angles in [−t, t].
pub fn random_state(rng: &mut impl rand::Rng, n: usize, slack: usize, lo: f64, hi: f64, t: f64) -> VoltageState {
    let magnitudes = (0..n).map(|i| if i == slack { 1.0 } else { rng.gen_range(lo..=hi) }).collect();
    let angles = (0..n).map(|i| if i == slack || t == 0.0 { 0.0 } else { rng.gen_range(-t..=t) }).collect();
    VoltageState { magnitudes, angles }
}

/// P_i = Σ_k |V_i||V_k| (G_ik cos θ_ik + B_ik sin θ_ik), term by term.
pub fn active_power_by_terms(net: &Network, s: &VoltageState) -> Vec<f64> {
    let y = net.ybus();
    let n = net.len();
    let mut p = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            let t = s.angles[i] - s.angles[k];
            acc += s.magnitudes[i] * s.magnitudes[k] * (y[(i, k)].re * t.cos() + y[(i, k)].im * t.sin());
        }
        p[i] = acc;
    }
    p
}

/// Q_i = Σ_k |V_i||V_k| (G_ik sin θ_ik − B_ik cos θ_ik), term by term.
pub fn reactive_power_by_terms(net: &Network, s: &VoltageState) -> Vec<f64> {
    let y = net.ybus();
    let n = net.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|k| {
                    let t = s.angles[i] - s.angles[k];
                    s.magnitudes[i] * s.magnitudes[k] * (y[(i, k)].re * t.sin() - y[(i, k)].im * t.cos())
                })
                .sum()
        })
        .collect()
}

pub fn weighted(net: &Network, p: &[f64]) -> f64 {
    net.buses().iter().zip(p).map(|(b, p)| b.lambda * p).sum()
}
