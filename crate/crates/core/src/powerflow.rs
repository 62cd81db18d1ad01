//! AC power flow: injections from voltages, Newton-Raphson in polar
//! coordinates, and Q-V sensitivities from the reduced Jacobian.
//!
//! Reactive power uses the standard form
//! `Q_i = Σ_k |V_i||V_k| (G_ik sin θ_ik − B_ik cos θ_ik)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageState {
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
}

impl VoltageState {
    pub fn new(magnitudes: Vec<f64>, angles: Vec<f64>) -> Result<VoltageState> {
        if magnitudes.len() != angles.len() {
            return Err(Error::DimensionMismatch { expected: magnitudes.len(), got: angles.len() });
        }
        Ok(VoltageState { magnitudes, angles })
    }

    pub fn flat(n: usize) -> VoltageState {
        VoltageState { magnitudes: vec![1.0; n], angles: vec![0.0; n] }
    }

    /// Real magnitudes with zero angles.
    pub fn real(magnitudes: Vec<f64>) -> VoltageState {
        let n = magnitudes.len();
        VoltageState { magnitudes, angles: vec![0.0; n] }
    }

    pub fn from_phasors(v: &[Complex64]) -> VoltageState {
        VoltageState {
            magnitudes: v.iter().map(|z| z.norm()).collect(),
            angles: v.iter().map(|z| z.arg()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn phasor(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.magnitudes[i], self.angles[i])
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.phasor(i)).collect()
    }

    /// (V_re, V_im) per bus.
    pub fn rectangular(&self) -> (Vec<f64>, Vec<f64>) {
        self.phasors().into_iter().map(|v| (v.re, v.im)).unzip()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn evaluate_injections(net: &Network, state: &VoltageState) -> Result<InjectionProfile> {
    let n = net.len();
    state.check_len(n)?;
    let y = net.ybus();
    let (a, t) = (&state.magnitudes, &state.angles);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let yik = y[(i, k)];
            if yik.re == 0.0 && yik.im == 0.0 {
                continue;
            }
            let (s, c) = (t[i] - t[k]).sin_cos();
            let aa = a[i] * a[k];
            p[i] += aa * (yik.re * c + yik.im * s);
            q[i] += aa * (yik.re * s - yik.im * c);
        }
    }
    Ok(InjectionProfile { p, q })
}

/// Σ_i P_i written as branch losses in rectangular coordinates:
/// Σ_branches g |V_i − V_k|² + Σ_buses g_sh |V_i|².
pub fn quadratic_form_total(net: &Network, state: &VoltageState) -> Result<f64> {
    state.check_len(net.len())?;
    let (re, im) = state.rectangular();
    let mut total = 0.0;
    for br in net.branches() {
        let g = br.admittance().re;
        let (dr, di) = (re[br.from] - re[br.to], im[br.from] - im[br.to]);
        total += g * (dr * dr + di * di);
    }
    for (i, bus) in net.buses().iter().enumerate() {
        total += bus.shunt.re * (re[i] * re[i] + im[i] * im[i]);
    }
    Ok(total)
}

/// The same total in polar coordinates: Σ g (a² + b² − 2ab cos θ_ik).
pub fn polar_form_total(net: &Network, state: &VoltageState) -> Result<f64> {
    state.check_len(net.len())?;
    let (a, t) = (&state.magnitudes, &state.angles);
    let mut total = 0.0;
    for br in net.branches() {
        let g = br.admittance().re;
        let (x, y) = (a[br.from], a[br.to]);
        total += g * (x * x + y * y - 2.0 * x * y * (t[br.from] - t[br.to]).cos());
    }
    for (i, bus) in net.buses().iter().enumerate() {
        total += bus.shunt.re * a[i] * a[i];
    }
    Ok(total)
}

/// What a bus holds fixed during a power-flow solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusSpec {
    Slack { v: f64, theta: f64 },
    Pv { p: f64, v: f64 },
    Pq { p: f64, q: f64 },
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; flat start when absent. Fixed magnitudes and the
    /// slack angle are overwritten from the spec.
    pub init: Option<VoltageState>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-8, max_iter: 50, init: None }
    }
}

/// Full polar Jacobian [[∂P/∂θ, ∂P/∂a], [∂Q/∂θ, ∂Q/∂a]], all buses.
pub(crate) struct Jacobian {
    pub dp_dt: DMatrix<f64>,
    pub dp_da: DMatrix<f64>,
    pub dq_dt: DMatrix<f64>,
    pub dq_da: DMatrix<f64>,
}

pub(crate) fn jacobian(net: &Network, state: &VoltageState, inj: &InjectionProfile) -> Jacobian {
    let n = net.len();
    let y = net.ybus();
    let (a, t) = (&state.magnitudes, &state.angles);
    let mut j = Jacobian {
        dp_dt: DMatrix::zeros(n, n),
        dp_da: DMatrix::zeros(n, n),
        dq_dt: DMatrix::zeros(n, n),
        dq_da: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for k in 0..n {
            let yik = y[(i, k)];
            if i == k || (yik.re == 0.0 && yik.im == 0.0) {
                continue;
            }
            let (g, b) = (yik.re, yik.im);
            let (s, c) = (t[i] - t[k]).sin_cos();
            j.dp_dt[(i, k)] = a[i] * a[k] * (g * s - b * c);
            j.dp_da[(i, k)] = a[i] * (g * c + b * s);
            j.dq_dt[(i, k)] = -a[i] * a[k] * (g * c + b * s);
            j.dq_da[(i, k)] = a[i] * (g * s - b * c);
        }
        let (gii, bii) = (y[(i, i)].re, y[(i, i)].im);
        let (p, q, ai) = (inj.p[i], inj.q[i], a[i]);
        j.dp_dt[(i, i)] = -q - bii * ai * ai;
        j.dp_da[(i, i)] = p / ai + gii * ai;
        j.dq_dt[(i, i)] = p - gii * ai * ai;
        j.dq_da[(i, i)] = q / ai - bii * ai;
    }
    j
}

pub fn solve_newton(net: &Network, spec: &[BusSpec], opts: &NewtonOptions) -> Result<VoltageState> {
    let n = net.len();
    if spec.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: spec.len() });
    }
    let mut state = match &opts.init {
        Some(s) => {
            s.check_len(n)?;
            s.clone()
        }
        None => VoltageState::flat(n),
    };
    for (i, s) in spec.iter().enumerate() {
        match *s {
            BusSpec::Slack { v, theta } => {
                state.magnitudes[i] = v;
                state.angles[i] = theta;
            }
            BusSpec::Pv { v, .. } => state.magnitudes[i] = v,
            BusSpec::Pq { .. } => {}
        }
    }
    // unknowns: θ at every non-slack bus, |V| at every PQ bus
    let theta_idx: Vec<usize> = (0..n).filter(|&i| !matches!(spec[i], BusSpec::Slack { .. })).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| matches!(spec[i], BusSpec::Pq { .. })).collect();
    let (nt, m) = (theta_idx.len(), theta_idx.len() + mag_idx.len());

    let mut iterations = 0;
    loop {
        let inj = evaluate_injections(net, &state)?;
        let mut mismatch = DVector::zeros(m);
        for (r, &i) in theta_idx.iter().enumerate() {
            let p = match spec[i] {
                BusSpec::Pv { p, .. } | BusSpec::Pq { p, .. } => p,
                BusSpec::Slack { .. } => unreachable!(),
            };
            mismatch[r] = p - inj.p[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            if let BusSpec::Pq { q, .. } = spec[i] {
                mismatch[nt + r] = q - inj.q[i];
            }
        }
        let norm = mismatch.amax();
        if !norm.is_finite() {
            return Err(Error::NonConvergence { iterations, mismatch: norm });
        }
        if norm <= opts.tol {
            return Ok(state);
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { iterations, mismatch: norm });
        }
        let j = jacobian(net, &state, &inj);
        let jac = DMatrix::from_fn(m, m, |r, c| {
            let (top, i) = if r < nt { (true, theta_idx[r]) } else { (false, mag_idx[r - nt]) };
            let (ang, k) = if c < nt { (true, theta_idx[c]) } else { (false, mag_idx[c - nt]) };
            match (top, ang) {
                (true, true) => j.dp_dt[(i, k)],
                (true, false) => j.dp_da[(i, k)],
                (false, true) => j.dq_dt[(i, k)],
                (false, false) => j.dq_da[(i, k)],
            }
        });
        let dx = jac.lu().solve(&mismatch).ok_or(Error::SingularJacobian)?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        for (r, &i) in theta_idx.iter().enumerate() {
            state.angles[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            state.magnitudes[i] += dx[nt + r];
        }
        iterations += 1;
    }
}

/// ∂|V|/∂Q with every non-slack bus holding its active injection, from
/// the reduced Jacobian `J_QV − J_Qθ J_Pθ⁻¹ J_PV`. Returned as an n×n
/// matrix whose slack row and column are zero.
pub fn qv_sensitivity(net: &Network, state: &VoltageState) -> Result<DMatrix<f64>> {
    let n = net.len();
    state.check_len(n)?;
    let inj = evaluate_injections(net, state)?;
    let j = jacobian(net, state, &inj);
    let idx = net.free_buses();
    let m = idx.len();
    let pick = |mat: &DMatrix<f64>| DMatrix::from_fn(m, m, |r, c| mat[(idx[r], idx[c])]);
    let (pt, pv, qt, qv) = (pick(&j.dp_dt), pick(&j.dp_da), pick(&j.dq_dt), pick(&j.dq_da));
    let pt_inv_pv = pt.lu().solve(&pv).ok_or(Error::SingularJacobian)?;
    let reduced = qv - qt * pt_inv_pv;
    let s = reduced.try_inverse().ok_or(Error::SingularJacobian)?;
    let mut out = DMatrix::zeros(n, n);
    for r in 0..m {
        for c in 0..m {
            out[(idx[r], idx[c])] = s[(r, c)];
        }
    }
    Ok(out)
}

/// ∂|V_F|/∂Q_F for a subset of buses F with every angle held fixed:
/// the inverse of the `∂Q_F/∂|V_F|` block.
pub fn qv_sensitivity_fixed_angles(net: &Network, state: &VoltageState, buses: &[usize]) -> Result<DMatrix<f64>> {
    state.check_len(net.len())?;
    let inj = evaluate_injections(net, state)?;
    let j = jacobian(net, state, &inj);
    let m = buses.len();
    let block = DMatrix::from_fn(m, m, |r, c| j.dq_da[(buses[r], buses[c])]);
    block.try_inverse().ok_or(Error::SingularJacobian)
}
