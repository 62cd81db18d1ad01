//! Case files bundled with the crate (the repository's `fixtures/`).

use crate::error::Result;
use crate::netmodel::{parse_case, Network};
use crate::sequence::{parse_case3, ThreePhaseNetwork};

pub const THREE_BUS: &str = include_str!("../../../fixtures/3bus.case");
pub const FOUR_BUS_COMPLEX: &str = include_str!("../../../fixtures/4bus_complex.case");
pub const FOUR_BUS_WEIGHTED: &str = include_str!("../../../fixtures/4bus_weighted.case");
pub const FOUR_BUS_THERMAL: &str = include_str!("../../../fixtures/4bus_thermal.case");
pub const FIVE_BUS_CHAIN: &str = include_str!("../../../fixtures/5bus_chain.case");
pub const FIVE_BUS_STAR: &str = include_str!("../../../fixtures/5bus_star.case");
pub const SIX_BUS_BRANCHED: &str = include_str!("../../../fixtures/6bus_branched.case");
pub const EIGHT_BUS: &str = include_str!("../../../fixtures/8bus.case");
pub const BUS_123: &str = include_str!("../../../fixtures/123bus.case");
pub const EIGHT_BUS_BALANCED: &str = include_str!("../../../fixtures/8bus_balanced.case3");
pub const EIGHT_BUS_UNTRANSPOSED: &str = include_str!("../../../fixtures/8bus_untransposed.case3");
pub const EIGHT_BUS_UNBALANCED: &str = include_str!("../../../fixtures/8bus_unbalanced.case3");

/// Every single-phase fixture by file stem.
pub const ALL: &[(&str, &str)] = &[
    ("3bus", THREE_BUS),
    ("4bus_complex", FOUR_BUS_COMPLEX),
    ("4bus_weighted", FOUR_BUS_WEIGHTED),
    ("4bus_thermal", FOUR_BUS_THERMAL),
    ("5bus_chain", FIVE_BUS_CHAIN),
    ("5bus_star", FIVE_BUS_STAR),
    ("6bus_branched", SIX_BUS_BRANCHED),
    ("8bus", EIGHT_BUS),
    ("123bus", BUS_123),
];

pub fn load(name: &str) -> Result<Network> {
    let text = ALL
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .unwrap_or_else(|| panic!("no fixture named {name}"));
    parse_case(text)
}

/// Every three-phase fixture by file stem.
pub const ALL_THREE_PHASE: &[(&str, &str)] = &[
    ("8bus_balanced", EIGHT_BUS_BALANCED),
    ("8bus_untransposed", EIGHT_BUS_UNTRANSPOSED),
    ("8bus_unbalanced", EIGHT_BUS_UNBALANCED),
];

pub fn load3(name: &str) -> Result<ThreePhaseNetwork> {
    let text = ALL_THREE_PHASE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .unwrap_or_else(|| panic!("no three-phase fixture named {name}"));
    parse_case3(text)
}
