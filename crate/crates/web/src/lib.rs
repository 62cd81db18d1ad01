//! Browser bindings for the hosting-capacity solver.
//!
//! Every export takes case text plus plain numbers and returns a JSON
//! string; errors come back as JavaScript exceptions carrying the message.

use hostcap::fixtures;
use hostcap::hccore::{critical_angle, solve_hc, Binding, ConstraintSet};
use hostcap::netmodel::{parse_case, Network};
use hostcap::oracle::{pv_curve_surface, GridSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest magnitude grid the surface view accepts per axis.
pub const MAX_SURFACE_STEPS: usize = 201;
/// Largest number of points in an angle sweep.
pub const MAX_SWEEP_POINTS: usize = 400;

#[derive(Debug, Serialize)]
pub struct SurfaceView {
    pub buses: [i64; 2],
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// Objective per grid point, row-major over (v1, v2); `None` where infeasible.
    pub p_sum: Vec<Option<f64>>,
    pub best: Option<BestPoint>,
}

#[derive(Debug, Serialize)]
pub struct BestPoint {
    pub v1: f64,
    pub v2: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_sum: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub theta_max: f64,
    pub hc_total: f64,
    /// Magnitudes of every bus, in case order.
    pub v: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct AngleSweep {
    pub critical_angle: f64,
    pub bus_ids: Vec<i64>,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Serialize)]
pub struct SolveView {
    pub stages: Vec<(String, f64)>,
    pub final_stage: String,
    pub hc_total: f64,
    pub binding: Vec<String>,
    pub buses: Vec<BusView>,
}

#[derive(Debug, Serialize)]
pub struct BusView {
    pub id: i64,
    pub v: f64,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
}

fn load(text: &str) -> Result<Network, String> {
    parse_case(text).map_err(|e| e.to_string())
}

fn constraints(net: &Network, v_min: f64, v_max: f64, theta_max: f64, eta: f64) -> Result<ConstraintSet, String> {
    let c = ConstraintSet { v_min, v_max, theta_max, eta: (eta > 0.0).then_some(eta), ..ConstraintSet::from_case(&net.defaults) };
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn binding_label(b: &Binding) -> String {
    match b {
        Binding::VoltageMax { bus } => format!("v_max at bus {bus}"),
        Binding::VoltageMin { bus } => format!("v_min at bus {bus}"),
        Binding::Angle { from, to } => format!("angle on {from}-{to}"),
        Binding::Thermal { from, to } => format!("thermal on {from}-{to}"),
        Binding::PowerFactor { bus } => format!("power factor at bus {bus}"),
    }
}

/// Objective over the two free magnitudes of a two-generator case.
pub fn surface(case: &str, v_min: f64, v_max: f64, steps: usize) -> Result<SurfaceView, String> {
    if !(2..=MAX_SURFACE_STEPS).contains(&steps) {
        return Err(format!("steps must be between 2 and {MAX_SURFACE_STEPS}"));
    }
    let net = load(case)?;
    let c = constraints(&net, v_min, v_max, 0.0, 0.0)?;
    let s = pv_curve_surface(&net, &c, &GridSpec::new(steps, 2)).map_err(|e| e.to_string())?;
    let axis = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = s.rows.iter().map(|r| if k == 0 { r.v1 } else { r.v2 }).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    Ok(SurfaceView {
        buses: s.buses,
        v1: axis(0),
        v2: axis(1),
        p_sum: s.rows.iter().map(|r| r.feasible.then_some(r.p_sum)).collect(),
        best: s.best().map(|r| BestPoint { v1: r.v1, v2: r.v2, p1: r.p1, p2: r.p2, p_sum: r.p_sum }),
    })
}

/// Hosting capacity and bus magnitudes as the angle bound grows from 0 to `theta_to`.
pub fn angle_sweep(case: &str, v_min: f64, v_max: f64, theta_to: f64, points: usize) -> Result<AngleSweep, String> {
    if !(2..=MAX_SWEEP_POINTS).contains(&points) {
        return Err(format!("points must be between 2 and {MAX_SWEEP_POINTS}"));
    }
    if !(theta_to > 0.0 && theta_to < std::f64::consts::FRAC_PI_2) {
        return Err("theta_to must lie in (0, pi/2)".into());
    }
    let net = load(case)?;
    let points = (0..points)
        .map(|k| {
            let theta = theta_to * k as f64 / (points - 1) as f64;
            let c = constraints(&net, v_min, v_max, theta, 0.0)?;
            let sol = solve_hc(&net, &c).map_err(|e| e.to_string())?;
            Ok(SweepPoint { theta_max: theta, hc_total: sol.hc_total, v: sol.state.magnitudes })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(AngleSweep { critical_angle: critical_angle(v_max, v_min), bus_ids: net.buses().iter().map(|b| b.id).collect(), points })
}

/// Full constructive solve; `eta <= 0` disables the power-factor floor.
pub fn solve(case: &str, v_min: f64, v_max: f64, theta_max: f64, eta: f64) -> Result<SolveView, String> {
    let net = load(case)?;
    let c = constraints(&net, v_min, v_max, theta_max, eta)?;
    let sol = solve_hc(&net, &c).map_err(|e| e.to_string())?;
    Ok(SolveView {
        stages: sol.history.iter().map(|s| (s.stage.label().to_string(), s.hc_total)).collect(),
        final_stage: sol.stage.label().to_string(),
        hc_total: sol.hc_total,
        binding: sol.binding.iter().map(binding_label).collect(),
        buses: net
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| BusView {
                id: b.id,
                v: sol.state.magnitudes[i],
                theta: sol.state.angles[i],
                p: sol.injections.p[i],
                q: sol.injections.q[i],
            })
            .collect(),
    })
}

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pvSurface)]
pub fn pv_surface_js(case: &str, v_min: f64, v_max: f64, steps: usize) -> Result<String, JsError> {
    to_js(surface(case, v_min, v_max, steps).and_then(|s| json(&s)))
}

#[wasm_bindgen(js_name = angleSweep)]
pub fn angle_sweep_js(case: &str, v_min: f64, v_max: f64, theta_to: f64, points: usize) -> Result<String, JsError> {
    to_js(angle_sweep(case, v_min, v_max, theta_to, points).and_then(|s| json(&s)))
}

#[wasm_bindgen(js_name = solveCase)]
pub fn solve_js(case: &str, v_min: f64, v_max: f64, theta_max: f64, eta: f64) -> Result<String, JsError> {
    to_js(solve(case, v_min, v_max, theta_max, eta).and_then(|s| json(&s)))
}

/// Names of the bundled single-phase example cases.
#[wasm_bindgen(js_name = exampleNames)]
pub fn example_names() -> Vec<String> {
    fixtures::ALL.iter().map(|(n, _)| n.to_string()).collect()
}

/// Text of a bundled example case, empty for an unknown name.
#[wasm_bindgen(js_name = exampleCase)]
pub fn example_case(name: &str) -> String {
    fixtures::ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| t.to_string()).unwrap_or_default()
}
