//! Limiting macroscopic system and the moment-level view of kinetic runs.
//!
//! ```text
//! dV/dt = N(V) - W - L[V] (+ E at the eps level)
//! dW/dt = a V - b W + c
//! L[V]  = V (Psi * rho0) - Psi * (rho0 V)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinetic::{DiagnosticsReport, KineticModel};
use crate::model::{kernel_matrix, Kernel, KernelMatrix, ModelParams, SpatialField};

/// `|V|` beyond which an integration is declared blown up.
pub const BLOWUP_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub t: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// `V (Psi * rho0) - Psi * (rho0 V)` with the discrete convolution.
pub fn nonlocal_l(kernel: &KernelMatrix, rho0: &[f64], v: &[f64]) -> Vec<f64> {
    let mass = kernel.convolve(rho0);
    let weighted: Vec<f64> = rho0.iter().zip(v).map(|(r, x)| r * x).collect();
    let conv = kernel.convolve(&weighted);
    v.iter().zip(&mass).zip(&conv).map(|((x, s), g)| x * s - g).collect()
}

#[derive(Debug, Clone)]
pub struct MacroSystem {
    pub params: ModelParams,
    pub rho0: Vec<f64>,
    pub kernel: KernelMatrix,
}

impl MacroSystem {
    pub fn new(params: ModelParams, rho0: &SpatialField, kernel: &Kernel) -> Result<Self> {
        Ok(Self {
            kernel: kernel_matrix(kernel, rho0)?,
            rho0: rho0.values.clone(),
            params,
        })
    }

    /// The limit system sharing a kinetic model's data.
    pub fn from_kinetic(model: &KineticModel) -> Self {
        Self {
            params: model.params.clone(),
            rho0: model.rho0.values.clone(),
            kernel: model.kernel.clone(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.rho0.len()
    }

    pub fn nonlocal_l(&self, v: &[f64]) -> Vec<f64> {
        nonlocal_l(&self.kernel, &self.rho0, v)
    }

    /// Time derivative of `(V, W)`. `error_term` adds `E` to the voltage
    /// equation, giving the eps-level system.
    pub fn rhs(&self, v: &[f64], w: &[f64], error_term: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let l = self.nonlocal_l(v);
        let p = &self.params;
        let dv = (0..v.len())
            .map(|i| p.drift_n(v[i]) - w[i] - l[i] + error_term.map_or(0.0, |e| e[i]))
            .collect();
        let dw = v.iter().zip(w).map(|(&x, &y)| p.adaptation(x, y)).collect();
        (dv, dw)
    }

    fn rk4_step(&self, v: &mut [f64], w: &mut [f64], h: f64) {
        let n = v.len();
        let shifted = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> { base.iter().zip(k).map(|(b, k)| b + s * k).collect() };
        let (k1v, k1w) = self.rhs(v, w, None);
        let (k2v, k2w) = self.rhs(&shifted(v, &k1v, 0.5 * h), &shifted(w, &k1w, 0.5 * h), None);
        let (k3v, k3w) = self.rhs(&shifted(v, &k2v, 0.5 * h), &shifted(w, &k2w, 0.5 * h), None);
        let (k4v, k4w) = self.rhs(&shifted(v, &k3v, h), &shifted(w, &k3w, h), None);
        for i in 0..n {
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            w[i] += h / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }
    }

    /// Classical RK4 from `state` through each of `times` (nondecreasing,
    /// not before `state.t`), with steps of at most `dt`. Returns one state
    /// per requested time.
    pub fn integrate_to(&self, state: &MacroState, times: &[f64], dt: f64) -> Result<Vec<MacroState>> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if state.v.len() != self.nodes() || state.w.len() != self.nodes() {
            return Err(invalid("state", "field length differs from the node count"));
        }
        let mut t = state.t;
        let (mut v, mut w) = (state.v.clone(), state.w.clone());
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            if target < t - 1e-12 {
                return Err(invalid("times", "must be nondecreasing and not before the start"));
            }
            let span = (target - t).max(0.0);
            let steps = (span / dt - 1e-9).ceil().max(0.0) as usize;
            for _ in 0..steps {
                self.rk4_step(&mut v, &mut w, span / steps as f64);
                if let Some(x) = v.iter().find(|x| !(x.abs() <= BLOWUP_LIMIT)) {
                    return Err(Error::BlowupDetected { t, value: *x });
                }
            }
            t = target;
            out.push(MacroState {
                t,
                v: v.clone(),
                w: w.clone(),
            });
        }
        Ok(out)
    }

    /// Fixed-step RK4 to `t_end`, recording every `stride` and at the end.
    pub fn integrate(&self, state: &MacroState, t_end: f64, dt: f64, stride: f64) -> Result<Vec<MacroState>> {
        if t_end < state.t {
            return Err(invalid("t_end", "must not precede the start"));
        }
        let mut times = Vec::new();
        if stride > 0.0 {
            let n = ((t_end - state.t) / stride + 1e-9).floor() as usize;
            times.extend((1..=n).map(|k| state.t + k as f64 * stride));
        }
        if times.last().map_or(true, |&last| (last - t_end).abs() > 1e-12) {
            times.push(t_end);
        }
        let mut traj = vec![state.clone()];
        traj.extend(self.integrate_to(state, &times, dt)?);
        Ok(traj)
    }
}

/// Moment trajectory of a kinetic run together with its residual against
/// the eps-level macroscopic equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsMacro {
    pub states: Vec<MacroState>,
    pub error_terms: Vec<Vec<f64>>,
    /// `max_x |dV/dt - rhs|` at interior snapshots (NaN at both ends).
    pub residual: Vec<f64>,
}

impl EpsMacro {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().filter(|r| r.is_finite()).fold(0.0, |m, &r| m.max(r))
    }
}

/// Extracts `(V^eps, W^eps)` from kinetic snapshots and checks them against
/// the eps-level voltage equation with a three-point time derivative.
pub fn eps_macro_reconstruction(system: &MacroSystem, reports: &[DiagnosticsReport]) -> Result<EpsMacro> {
    if reports.is_empty() {
        return Err(Error::MissingSnapshots("no kinetic snapshots".into()));
    }
    if let Some(r) = reports.iter().find(|r| r.nodes.len() != system.nodes()) {
        return Err(Error::MissingSnapshots(format!(
            "snapshot at t = {} has {} nodes, expected {}",
            r.t,
            r.nodes.len(),
            system.nodes()
        )));
    }
    let states: Vec<MacroState> = reports
        .iter()
        .map(|r| MacroState {
            t: r.t,
            v: r.v_field(),
            w: r.w_field(),
        })
        .collect();
    let error_terms: Vec<Vec<f64>> = reports.iter().map(|r| r.error_field()).collect();
    let mut residual = vec![f64::NAN; states.len()];
    for n in 1..states.len().saturating_sub(1) {
        let (a, b, c) = (&states[n - 1], &states[n], &states[n + 1]);
        let (h1, h2) = (b.t - a.t, c.t - b.t);
        if !(h1 > 0.0 && h2 > 0.0) {
            return Err(Error::MissingSnapshots(format!("repeated snapshot time {}", b.t)));
        }
        let (dv, _) = system.rhs(&b.v, &b.w, Some(&error_terms[n]));
        residual[n] = (0..system.nodes())
            .map(|i| {
                let fd = -h2 / (h1 * (h1 + h2)) * a.v[i] + (h2 - h1) / (h1 * h2) * b.v[i] + h1 / (h2 * (h1 + h2)) * c.v[i];
                (fd - dv[i]).abs()
            })
            .fold(0.0, f64::max);
    }
    Ok(EpsMacro {
        states,
        error_terms,
        residual,
    })
}

/// `sup_x max(|V - V'|, |W - W'|)` between two states.
pub fn sup_distance(a: &MacroState, b: &MacroState) -> f64 {
    a.v.iter()
        .zip(&b.v)
        .chain(a.w.iter().zip(&b.w))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drift;
    use approx::assert_abs_diff_eq;

    fn system(params: ModelParams, n: usize, kernel: Kernel) -> MacroSystem {
        let rho = SpatialField::on_unit_interval(n, |_| 1.0).unwrap();
        MacroSystem::new(params, &rho, &kernel).unwrap()
    }

    #[test]
    fn nonlocal_annihilates_constants_and_zero_kernel() {
        let s = system(ModelParams::fitzhugh_nagumo(0.1).unwrap(), 5, Kernel::exponential(1.5, 2.0));
        assert!(s.nonlocal_l(&[0.7; 5]).iter().all(|x| x.abs() < 1e-15));
        let z = system(ModelParams::fitzhugh_nagumo(0.1).unwrap(), 5, Kernel::zero());
        assert!(z.nonlocal_l(&[0.1, 2.0, -1.0, 0.0, 3.0]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nonlocal_three_nodes_by_hand() {
        // Nodes 1/6, 1/2, 5/6 with weights 1/3; Psi = exp(-|x - y|).
        let s = system(ModelParams::fitzhugh_nagumo(0.1).unwrap(), 3, Kernel::exponential(1.0, 1.0));
        let (e1, e2) = ((-1.0f64 / 3.0).exp(), (-2.0f64 / 3.0).exp());
        let psi = [[1.0, e1, e2], [e1, 1.0, e1], [e2, e1, 1.0]];
        let v = [0.0, 1.0, 0.0];
        let mut expect = [0.0; 3];
        for i in 0..3 {
            let mass: f64 = (0..3).map(|j| psi[i][j] / 3.0).sum();
            let conv: f64 = (0..3).map(|j| psi[i][j] * v[j] / 3.0).sum();
            expect[i] = v[i] * mass - conv;
        }
        let got = s.nonlocal_l(&v);
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], expect[i], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(got[0], -e1 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_examples() {
        let cubic = |a, b, c| ModelParams::new(a, b, c, 0.1, 0.5, Drift::cubic()).unwrap();
        let s = system(cubic(1.0, 1.0, 0.0), 1, Kernel::zero());
        let (dv, dw) = s.rhs(&[2.0], &[0.0], None);
        assert_eq!((dv[0], dw[0]), (-6.0, 2.0));
        let s = system(cubic(0.0, 1.0, 1.0), 1, Kernel::zero());
        let (dv, dw) = s.rhs(&[0.0], &[0.0], None);
        assert_eq!((dv[0], dw[0]), (0.0, 1.0));
        // On the cubic nullcline W = N(V) the voltage is stationary.
        let s = system(cubic(0.0, 1.0, 0.0), 1, Kernel::zero());
        let v = 0.4;
        let (dv, _) = s.rhs(&[v], &[Drift::cubic().eval(v)], None);
        assert_eq!(dv[0], 0.0);
    }

    #[test]
    fn equilibrium_stays_put() {
        // a = c = 0 pins W = 0; V = 0 is then a zero of N.
        let p = ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, Drift::cubic()).unwrap();
        let s = system(p, 2, Kernel::zero());
        let start = MacroState {
            t: 0.0,
            v: vec![0.0; 2],
            w: vec![0.0; 2],
        };
        let traj = s.integrate(&start, 1.0, 1e-3, 0.5).unwrap();
        assert_eq!(traj.len(), 3);
        assert!(traj.iter().all(|st| st.v == start.v && st.w == start.w));
    }

    #[test]
    fn linear_case_matches_matrix_exponential() {
        // V' = -V - W, W' = V - W: exp(tM) = e^{-t} [[cos t, -sin t], [sin t, cos t]].
        let p = ModelParams::new(1.0, 1.0, 0.0, 0.1, 0.5, Drift::linear(1.0)).unwrap();
        let s = system(p, 1, Kernel::zero());
        let (v0, w0) = (0.8, -0.3);
        let start = MacroState {
            t: 0.0,
            v: vec![v0],
            w: vec![w0],
        };
        let out = s.integrate_to(&start, &[0.5, 1.0, 2.0], 1e-3).unwrap();
        for st in out {
            let t = st.t;
            let (c, sn, e) = (t.cos(), t.sin(), (-t).exp());
            assert_abs_diff_eq!(st.v[0], e * (c * v0 - sn * w0), epsilon = 1e-9);
            assert_abs_diff_eq!(st.w[0], e * (sn * v0 + c * w0), epsilon = 1e-9);
        }
    }

    #[test]
    fn rk4_richardson_ratio() {
        let s = system(ModelParams::fitzhugh_nagumo(0.1).unwrap(), 4, Kernel::exponential(1.0, 1.0));
        let start = MacroState {
            t: 0.0,
            v: vec![1.0, 0.5, -0.2, 1.2],
            w: vec![0.1, 0.0, 0.3, -0.2],
        };
        let at = |dt: f64| s.integrate_to(&start, &[1.0], dt).unwrap().pop().unwrap();
        let (a, b, c) = (at(0.02), at(0.01), at(0.005));
        let ratio = sup_distance(&a, &b) / sup_distance(&b, &c);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
        assert!(ratio.log2() >= 3.8);
    }

    #[test]
    fn blowup_is_reported() {
        // Anti-confining growth is impossible with a confining drift, so push
        // V with a huge constant forcing through c and a strong W coupling.
        let p = ModelParams::new(0.0, 1.0, -1e4, 0.1, 0.5, Drift::cubic()).unwrap();
        let s = system(p, 1, Kernel::zero());
        let start = MacroState {
            t: 0.0,
            v: vec![0.0],
            w: vec![0.0],
        };
        assert!(matches!(s.integrate(&start, 1.0, 1e-3, 0.0), Err(Error::BlowupDetected { .. })));
    }

    #[test]
    fn reconstruction_needs_snapshots() {
        let s = system(ModelParams::fitzhugh_nagumo(0.1).unwrap(), 1, Kernel::zero());
        assert!(matches!(eps_macro_reconstruction(&s, &[]), Err(Error::MissingSnapshots(_))));
    }
}
