//! Machine-readable run reports.

use hostcap::hccore::{Binding, ConstraintSet, HCSolution};
use hostcap::netmodel::Network;
use hostcap::oracle::ScreeningRow;
use hostcap::sequence::PhaseViolation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version of `schema/report.schema.json` the reports follow.
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub tool: Tool,
    pub command: String,
    pub input: Input,
    pub constraints: ConstraintSet,
    /// Objective after each stage of the constructive pipeline.
    pub stages: Vec<StageResult>,
    pub final_stage: String,
    pub construction: String,
    pub hc_total: f64,
    pub binding: Vec<Binding>,
    pub buses: Vec<BusResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unbalanced: Option<UnbalancedReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening: Option<Vec<ScreeningRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub path: String,
    pub sha256: String,
}

impl Input {
    pub fn new(path: &str, bytes: &[u8]) -> Input {
        Input { path: path.to_string(), sha256: format!("{:x}", Sha256::digest(bytes)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub hc_total: f64,
}

/// One bus of the reported operating point; magnitudes and powers in p.u., angles in rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusResult {
    pub id: i64,
    pub v: f64,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub cuts: Vec<i64>,
    pub workers: usize,
    pub subsystem_hc: Vec<f64>,
    /// Chosen magnitude of each cut bus.
    pub boundary: Vec<BoundaryValue>,
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc_monolithic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValue {
    pub bus: i64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub hc_oracle: f64,
    pub hc_theorem: f64,
    pub eps_grid: f64,
    /// |hc_oracle − hc_theorem| ≤ eps_grid.
    pub agreement: bool,
    pub magnitude_steps: usize,
    pub angle_steps: usize,
    pub points: f64,
    pub exhaustive: bool,
    /// Ids of the two free buses behind the v1 and v2 columns.
    pub surface_buses: [i64; 2],
    pub surface_csv: String,
    pub pairs_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedReport {
    pub scenario: String,
    pub method: String,
    pub coupling_rel: f64,
    pub hc_per_phase: [f64; 3],
    pub hc_total: f64,
    pub phases: Vec<PhaseResult>,
    pub violations: Vec<PhaseViolation>,
    pub floored: Vec<i64>,
}

/// Phase-voltage magnitudes of one bus, p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub id: i64,
    pub va: f64,
    pub vb: f64,
    pub vc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monolithic_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributed_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl RunReport {
    pub fn new(command: &str, input: Input, constraints: ConstraintSet, net: &Network, sol: &HCSolution) -> RunReport {
        let buses = net
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| BusResult {
                id: b.id,
                v: sol.state.magnitudes[i],
                theta: sol.state.angles[i],
                p: sol.injections.p[i],
                q: sol.injections.q[i],
            })
            .collect();
        RunReport {
            schema_version: SCHEMA_VERSION.to_string(),
            tool: Tool { name: env!("CARGO_PKG_NAME").to_string(), version: env!("CARGO_PKG_VERSION").to_string() },
            command: command.to_string(),
            input,
            constraints,
            stages: sol.history.iter().map(|s| StageResult { stage: s.stage.label().to_string(), hc_total: s.hc_total }).collect(),
            final_stage: sol.stage.label().to_string(),
            construction: serde_json::to_value(sol.construction).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            hc_total: sol.hc_total,
            binding: sol.binding.clone(),
            buses,
            partition: None,
            oracle: None,
            unbalanced: None,
            screening: None,
            timings: None,
        }
    }
}
