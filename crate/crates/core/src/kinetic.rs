//! Time integrator for the kinetic FitzHugh-Nagumo equation on a spatial grid.
//!
//! One step is a Strang composition:
//!
//! ```text
//! T(dt/2) -> refresh V^eps -> R(dt) -> T(dt/2)
//! ```
//!
//! `R` is the exact Ornstein-Uhlenbeck transition for everything that is
//! linear in `v`: the stiff relaxation `(rho0/eps)(v - V^eps)`, the affine
//! part of `N`, the `-w` coupling and the nonlocal term `K_Psi`. Along a
//! fixed-`w` column this drift reads `-kappa (v - center)` and is solved in
//! closed form, so the step size never depends on `eps`.
//!
//! `T` is first-order flux-splitting upwind for the rest: the nonlinear
//! part of `N` in `v` and `A(v, w)` in `w`. Fluxes use cell-centered
//! velocities, which keeps the mean of the transported field exact and the
//! update a nonnegative combination of neighbors under CFL.
//!
//! Both substeps are linear with nonnegative coefficients once the
//! mean-field coefficients are frozen. [`KineticModel::step_frozen`] exposes
//! that linear map for comparison-principle checks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{kernel_matrix, Kernel, KernelMatrix, ModelParams, SpatialField};
use crate::par;
use crate::phase_grid::{gaussian, truncation_report, PhaseGrid};

/// Boundary mass above which a run is rejected.
pub const TRUNCATION_LIMIT: f64 = 1e-8;
/// Relative per-node mass drift that aborts a run.
pub const MASS_DRIFT_LIMIT: f64 = 1e-6;
/// CFL number accepted by a single transport substep.
pub const CFL_LIMIT: f64 = 0.9;
/// Values below this are flushed to zero after each step.
pub const UNDERFLOW: f64 = 1e-290;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    #[default]
    Upwind,
    /// Minmod-limited flux-splitting MUSCL. Not monotone in general.
    Muscl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub transport: TransportScheme,
    /// CFL number used when subcycling the transport half steps.
    pub subcycle_cfl: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            transport: TransportScheme::Upwind,
            subcycle_cfl: 0.5,
        }
    }
}

/// Immutable solver context shared by every state evolved on it.
#[derive(Debug, Clone)]
pub struct KineticModel {
    pub params: ModelParams,
    pub grid: PhaseGrid,
    pub rho0: SpatialField,
    pub kernel: KernelMatrix,
    /// `(Psi *_r rho0)(x_i)`
    pub kernel_mass: Vec<f64>,
    pub options: SolverOptions,
    /// `A(v_j, w_k)` laid out like a grid function.
    w_velocity: Vec<f64>,
    /// `max_k |A(v_j, w_k)| / dw` for each voltage index.
    w_rate: Vec<f64>,
    drift_at_v: Vec<f64>,
}

/// Transport rates of one node for a given linearization point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportRates {
    /// `max(|B|/dv, |A|/dw)`, the quantity bounded by the CFL limit.
    pub cfl: f64,
    /// `max over cells of |B|/dv + |A|/dw`; bounds the nonnegative step.
    pub positivity: f64,
}

/// Mean-field coefficients that close the linear part of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// `V^eps(x_i)` at the start of the relaxation substep.
    pub center: Vec<f64>,
    /// `W^eps(x_i)`, which the relaxation substep does not move.
    pub w_mean: Vec<f64>,
    /// `(Psi *_r (rho0 V^eps))(x_i)` at the substep midpoint.
    pub coupling: Vec<f64>,
    /// Voltage at which `N` is linearized for the whole step, per node.
    pub pivot: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KineticState {
    pub t: f64,
    /// One grid function per spatial node.
    pub f: Vec<Vec<f64>>,
    pub v_field: Vec<f64>,
    pub w_field: Vec<f64>,
    /// Cumulative mass lost through the grid boundary, per node.
    pub outflow: Vec<f64>,
}

/// Moments of one node's density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMoments {
    pub mass: f64,
    pub v_mean: f64,
    pub w_mean: f64,
    /// `D_2 = (1/rho) int |v - V|^2 f`
    pub d2: f64,
    /// `E(f) = (1/rho) int N(v) f - N(V)`
    pub error_term: f64,
    pub min_f: f64,
    pub max_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub t: f64,
    pub nodes: Vec<NodeMoments>,
    pub outflow: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn v_field(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.v_mean).collect()
    }

    pub fn w_field(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.w_mean).collect()
    }

    pub fn error_field(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.error_term).collect()
    }
}

/// Callback invoked on every snapshot of [`KineticModel::run`].
pub trait Observer {
    fn observe(&mut self, model: &KineticModel, state: &KineticState, report: &DiagnosticsReport) -> Result<()>;
}

impl KineticModel {
    pub fn new(
        params: ModelParams,
        grid: PhaseGrid,
        rho0: SpatialField,
        kernel: &Kernel,
        options: SolverOptions,
    ) -> Result<Self> {
        crate::model::check_density(&rho0, params.m_star)?;
        let kernel = kernel_matrix(kernel, &rho0)?;
        let kernel_mass = kernel.convolve(&rho0.values);
        let drift_at_v = grid.v_centers.iter().map(|&v| params.drift_n(v)).collect();
        let w_velocity = grid.sample(|v, w| params.adaptation(v, w));
        let mut w_rate = vec![0.0f64; grid.n_v];
        for (idx, a) in w_velocity.iter().enumerate() {
            let j = idx % grid.n_v;
            w_rate[j] = w_rate[j].max(a.abs() / grid.dw);
        }
        if !(options.subcycle_cfl > 0.0 && options.subcycle_cfl <= CFL_LIMIT) {
            return Err(invalid("subcycle_cfl", format!("must lie in (0, {CFL_LIMIT}]")));
        }
        Ok(Self {
            params,
            grid,
            rho0,
            kernel,
            kernel_mass,
            options,
            w_velocity,
            w_rate,
            drift_at_v,
        })
    }

    pub fn nodes(&self) -> usize {
        self.rho0.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }

    /// Transported voltage velocity `N(v) - N(pivot) - N'(pivot)(v - pivot)`.
    /// The tangent part travels with the exact relaxation substep instead.
    pub fn v_velocity(&self, pivot: f64) -> Vec<f64> {
        let (n0, n1) = self.params.drift.tangent_at(pivot);
        if self.params.drift.degree() <= 1 {
            return vec![0.0; self.grid.n_v];
        }
        self.grid
            .v_centers
            .iter()
            .zip(&self.drift_at_v)
            .map(|(&v, &n)| n - n0 - n1 * v)
            .collect()
    }

    pub fn transport_rates(&self, velocity: &[f64]) -> TransportRates {
        let g = &self.grid;
        let (mut cfl, mut positivity) = (0.0f64, 0.0f64);
        for (b, wr) in velocity.iter().zip(&self.w_rate) {
            let vr = b.abs() / g.dv;
            cfl = cfl.max(vr).max(*wr);
            positivity = positivity.max(vr + wr);
        }
        TransportRates { cfl, positivity }
    }

    /// Largest transport step the upwind scheme accepts at linearization `pivot`.
    pub fn cfl_dt(&self, pivot: f64) -> f64 {
        let rate = self.transport_rates(&self.v_velocity(pivot)).cfl;
        if rate == 0.0 {
            f64::INFINITY
        } else {
            CFL_LIMIT / rate
        }
    }

    /// Well-prepared data: `rho0 * N(v; V0, eps/rho0) * N(w; W0, sigma_w^2)`,
    /// rescaled so that each node carries exactly `rho0(x)`.
    pub fn initialize_well_prepared(
        &self,
        v0: &SpatialField,
        w0: &SpatialField,
        sigma_w: f64,
    ) -> Result<KineticState> {
        let n = self.nodes();
        if v0.len() != n || w0.len() != n {
            return Err(invalid("initial", "V0 and W0 must live on the spatial nodes"));
        }
        if !(sigma_w > 0.0) {
            return Err(invalid("sigma_w", "must be positive"));
        }
        let g = &self.grid;
        let eps = self.epsilon();
        for i in 0..n {
            let sv = (eps / self.rho0.values[i]).sqrt();
            let (vi, wi) = (v0.values[i], w0.values[i]);
            if vi - 4.0 * sv < g.v_min || vi + 4.0 * sv > g.v_max || wi - 4.0 * sigma_w < g.w_min || wi + 4.0 * sigma_w > g.w_max {
                return Err(invalid(
                    "initial",
                    format!("node {i}: (V0, W0) = ({vi}, {wi}) closer than 4 standard deviations to the grid edge"),
                ));
            }
        }
        let f: Vec<Vec<f64>> = par::map_range(n, |i| {
            let rho = self.rho0.values[i];
            let var_v = eps / rho;
            let mut col = g.sample(|v, w| rho * gaussian(v, v0.values[i], var_v) * gaussian(w, w0.values[i], sigma_w * sigma_w));
            flush_underflow(&mut col);
            let mass: f64 = col.iter().sum::<f64>() * g.cell_area;
            let scale = rho / mass;
            col.iter_mut().for_each(|x| *x *= scale);
            col
        });
        for fi in &f {
            let ring = truncation_report(g, fi);
            if ring > TRUNCATION_LIMIT {
                return Err(Error::TruncationViolation {
                    boundary_mass: ring,
                    limit: TRUNCATION_LIMIT,
                });
            }
        }
        let mut state = KineticState {
            t: 0.0,
            f,
            v_field: vec![0.0; n],
            w_field: vec![0.0; n],
            outflow: vec![0.0; n],
        };
        self.refresh_macros(&mut state);
        Ok(state)
    }

    /// Moments of a single node's density.
    pub fn node_moments(&self, f: &[f64]) -> NodeMoments {
        let g = &self.grid;
        let (mut s0, mut s1, mut sw, mut sn) = (0.0, 0.0, 0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, col) in f.chunks_exact(g.n_v).enumerate() {
            let (mut c0, mut c1, mut cn) = (0.0, 0.0, 0.0);
            for (j, &x) in col.iter().enumerate() {
                lo = lo.min(x);
                hi = hi.max(x);
                c0 += x;
                c1 += x * g.v_centers[j];
                cn += x * self.drift_at_v[j];
            }
            s0 += c0;
            s1 += c1;
            sn += cn;
            sw += c0 * g.w_centers[k];
        }
        let v_mean = s1 / s0;
        let mut s2 = 0.0;
        for col in f.chunks_exact(g.n_v) {
            for (j, &x) in col.iter().enumerate() {
                s2 += x * (g.v_centers[j] - v_mean).powi(2);
            }
        }
        NodeMoments {
            mass: s0 * g.cell_area,
            v_mean,
            w_mean: sw / s0,
            d2: s2 / s0,
            error_term: sn / s0 - self.params.drift_n(v_mean),
            min_f: lo,
            max_f: hi,
        }
    }

    /// Recomputes the cached `V^eps`, `W^eps` fields.
    pub fn refresh_macros(&self, state: &mut KineticState) {
        let moments = par::map_slice(&state.f, |fi| self.node_moments(fi));
        state.v_field = moments.iter().map(|m| m.v_mean).collect();
        state.w_field = moments.iter().map(|m| m.w_mean).collect();
    }

    pub fn report(&self, state: &KineticState) -> DiagnosticsReport {
        DiagnosticsReport {
            t: state.t,
            nodes: par::map_slice(&state.f, |fi| self.node_moments(fi)),
            outflow: state.outflow.clone(),
        }
    }

    /// Per-node `(V^eps, W^eps)` of a set of densities.
    pub fn node_means(&self, f: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let g = &self.grid;
        par::map_slice(f, |fi| {
            let (mut s0, mut s1, mut sw) = (0.0, 0.0, 0.0);
            for (k, col) in fi.chunks_exact(g.n_v).enumerate() {
                let (mut c0, mut c1) = (0.0, 0.0);
                for (j, &x) in col.iter().enumerate() {
                    c0 += x;
                    c1 += x * g.v_centers[j];
                }
                s0 += c0;
                s1 += c1;
                sw += c0 * g.w_centers[k];
            }
            (s1 / s0, sw / s0)
        })
    }

    /// Coefficients of the relaxation substep of length `dt` starting from
    /// densities `f`. The coupling is evaluated at the substep midpoint on
    /// the closed-form mean path, which keeps the step second order.
    pub fn coefficients(&self, f: &[Vec<f64>], dt: f64, pivot: &[f64]) -> Coefficients {
        let means = self.node_means(f);
        let center: Vec<f64> = means.iter().map(|m| m.0).collect();
        let w_mean: Vec<f64> = means.iter().map(|m| m.1).collect();
        let mut coeffs = Coefficients {
            coupling: self.coupling_of(&center),
            center,
            w_mean,
            pivot: pivot.to_vec(),
        };
        let half: Vec<f64> = (0..self.nodes()).map(|i| self.mean_path(i, &coeffs, 0.5 * dt)).collect();
        coeffs.coupling = self.coupling_of(&half);
        coeffs
    }

    /// `Psi *_r (rho0 V)`
    pub fn coupling_of(&self, v_field: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = v_field.iter().zip(&self.rho0.values).map(|(v, r)| v * r).collect();
        self.kernel.convolve(&weighted)
    }

    /// Node mean after time `s` of the relaxation flow. Relaxation toward the
    /// running mean leaves the mean alone, so it solves
    /// `m' = -(S - N_1) m + G + N_0 - W`, with `N_0 + N_1 v` the tangent of
    /// `N` at the pivot.
    pub fn mean_path(&self, i: usize, coeffs: &Coefficients, s: f64) -> f64 {
        let (n0, n1) = self.params.drift.tangent_at(coeffs.pivot[i]);
        let mu = self.kernel_mass[i] - n1;
        let forcing = coeffs.coupling[i] + n0 - coeffs.w_mean[i];
        coeffs.center[i] * (-mu * s).exp() + forcing * phi1(mu, s)
    }

    fn node_flow(&self, i: usize, coeffs: &Coefficients, dt: f64) -> NodeFlow {
        let (n0, n1) = self.params.drift.tangent_at(coeffs.pivot[i]);
        let lambda = self.rho0.values[i] / self.epsilon();
        let mu = self.kernel_mass[i] - n1;
        let kappa = lambda + mu;
        let flow = OuFlow::new(kappa, dt);
        let forcing = coeffs.coupling[i] + n0 - coeffs.w_mean[i];
        // int_0^dt e^{-kappa (dt - s)} m(s) ds for the mean path m.
        let e = (-mu * dt).exp() * (-(-lambda * dt).exp_m1()) / lambda;
        let jg = if (mu * dt).abs() > 1e-8 {
            (flow.phi1 - e) / mu
        } else {
            (dt - flow.phi1) / kappa
        };
        let j = coeffs.center[i] * e + forcing * jg;
        NodeFlow {
            decay: flow.decay,
            std: flow.std,
            phi1: flow.phi1,
            shift: lambda * j + (coeffs.coupling[i] + n0) * flow.phi1,
        }
    }

    /// Exact relaxation substep with `V^eps` refreshed from `state`.
    pub fn ou_relaxation_substep(&self, state: &mut KineticState, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let pivot: Vec<f64> = self.node_means(&state.f).iter().map(|m| m.0).collect();
        let coeffs = self.coefficients(&state.f, dt, &pivot);
        self.relax(&mut state.f, &coeffs, dt);
        state.t += dt;
        self.refresh_macros(state);
        Ok(())
    }

    /// Applies the linear-in-`v` flow for time `dt` with frozen coefficients.
    /// Along column `w_k` the drift is `-kappa v + lambda m(s) + G + N_0 - w_k`
    /// with `kappa = lambda + S - N_1`.
    pub fn relax(&self, f: &mut [Vec<f64>], coeffs: &Coefficients, dt: f64) {
        let g = &self.grid;
        par::for_each_indexed(f, |i, fi| {
            let flow = self.node_flow(i, coeffs, dt);
            let mut out = vec![0.0; g.n_v];
            for (k, col) in fi.chunks_exact_mut(g.n_v).enumerate() {
                let shift = flow.shift - g.w_centers[k] * flow.phi1;
                gaussian_remap(g, col, &mut out, flow.decay, shift, flow.std);
            }
        });
    }

    /// One transport substep of length `dt`. Fails beyond the CFL limit;
    /// below it the update is subcycled as needed to stay nonnegative.
    pub fn transport_substep(&self, state: &mut KineticState, dt: f64) -> Result<()> {
        let pivot: Vec<f64> = self.node_means(&state.f).iter().map(|m| m.0).collect();
        for &p in &pivot {
            let ratio = dt * self.transport_rates(&self.v_velocity(p)).cfl;
            if !(ratio <= CFL_LIMIT) {
                return Err(Error::CflViolation { ratio, limit: CFL_LIMIT });
            }
        }
        self.transport(&mut state.f, &mut state.outflow, dt, &pivot);
        state.t += dt;
        self.refresh_macros(state);
        Ok(())
    }

    /// Transport over `dt` with SSP-RK2, subcycled at the configured CFL
    /// number measured on the summed directional rates.
    pub fn transport(&self, f: &mut [Vec<f64>], outflow: &mut [f64], dt: f64, pivot: &[f64]) {
        let cfl = match self.options.transport {
            TransportScheme::Upwind => self.options.subcycle_cfl,
            TransportScheme::Muscl => self.options.subcycle_cfl.min(0.45),
        };
        let g = &self.grid;
        let mut pairs: Vec<(&mut Vec<f64>, &mut f64)> = f.iter_mut().zip(outflow.iter_mut()).collect();
        par::for_each_indexed(&mut pairs, |i, (fi, out)| {
            let b = self.v_velocity(pivot[i]);
            let rate = self.transport_rates(&b).positivity;
            if rate == 0.0 {
                return;
            }
            let n_sub = ((dt * rate) / cfl).ceil().max(1.0) as usize;
            let h = dt / n_sub as f64;
            let mut stage1 = vec![0.0; g.len()];
            let mut stage2 = vec![0.0; g.len()];
            let mut lost = 0.0;
            for _ in 0..n_sub {
                let o1 = self.euler_stage(fi, &mut stage1, h, &b);
                let o2 = self.euler_stage(&stage1, &mut stage2, h, &b);
                for (x, y) in fi.iter_mut().zip(&stage2) {
                    *x = 0.5 * (*x + y);
                }
                lost += 0.5 * (o1 + o2);
            }
            **out += lost * g.cell_area;
        });
    }

    /// `dst = src + h L src` for the transport operator `L`. Returns the
    /// boundary outflow in cell-value units.
    fn euler_stage(&self, src: &[f64], dst: &mut [f64], h: f64, b: &[f64]) -> f64 {
        match self.options.transport {
            TransportScheme::Upwind => self.upwind_stage(src, dst, h, b),
            TransportScheme::Muscl => self.muscl_stage(src, dst, h, b),
        }
    }

    fn upwind_stage(&self, src: &[f64], dst: &mut [f64], h: f64, b: &[f64]) -> f64 {
        let g = &self.grid;
        let (nv, nw) = (g.n_v, g.n_w);
        let (cv, cw) = (h / g.dv, h / g.dw);
        let a = &self.w_velocity;
        for k in 0..nw {
            let row = k * nv;
            for j in 0..nv {
                let idx = row + j;
                let mut val = src[idx] * (1.0 - cv * b[j].abs() - cw * a[idx].abs());
                if j > 0 && b[j - 1] > 0.0 {
                    val += cv * b[j - 1] * src[idx - 1];
                }
                if j + 1 < nv && b[j + 1] < 0.0 {
                    val -= cv * b[j + 1] * src[idx + 1];
                }
                if k > 0 && a[idx - nv] > 0.0 {
                    val += cw * a[idx - nv] * src[idx - nv];
                }
                if k + 1 < nw && a[idx + nv] < 0.0 {
                    val -= cw * a[idx + nv] * src[idx + nv];
                }
                dst[idx] = val;
            }
        }
        let mut lost = 0.0;
        for k in 0..nw {
            let row = k * nv;
            lost += cv * ((-b[0]).max(0.0) * src[row] + b[nv - 1].max(0.0) * src[row + nv - 1]);
        }
        let top = (nw - 1) * nv;
        for j in 0..nv {
            lost += cw * ((-a[j]).max(0.0) * src[j] + a[top + j].max(0.0) * src[top + j]);
        }
        lost
    }

    fn muscl_stage(&self, src: &[f64], dst: &mut [f64], h: f64, b: &[f64]) -> f64 {
        let g = &self.grid;
        let (nv, nw) = (g.n_v, g.n_w);
        let (cv, cw) = (h / g.dv, h / g.dw);
        let a = &self.w_velocity;
        dst.copy_from_slice(src);
        let mut lost = 0.0;
        let mut inc = vec![0.0; nv.max(nw)];
        for k in 0..nw {
            let row = k * nv;
            lost += muscl_increment(&src[row..row + nv], |j| b[j], cv, &mut inc[..nv]);
            for j in 0..nv {
                dst[row + j] += inc[j];
            }
        }
        let mut line = vec![0.0; nw];
        for j in 0..nv {
            for k in 0..nw {
                line[k] = src[k * nv + j];
            }
            lost += muscl_increment(&line, |k| a[k * nv + j], cw, &mut inc[..nw]);
            for k in 0..nw {
                dst[k * nv + j] += inc[k];
            }
        }
        lost
    }

    /// One Strang step. Returns the coefficients used by the relaxation
    /// substep so the same linear map can be replayed on other data.
    pub fn step(&self, state: &mut KineticState, dt: f64) -> Result<Coefficients> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let pivot: Vec<f64> = self.node_means(&state.f).iter().map(|m| m.0).collect();
        self.transport(&mut state.f, &mut state.outflow, 0.5 * dt, &pivot);
        let coeffs = self.coefficients(&state.f, dt, &pivot);
        self.relax(&mut state.f, &coeffs, dt);
        self.transport(&mut state.f, &mut state.outflow, 0.5 * dt, &pivot);
        state.t += dt;
        self.refresh_macros(state);
        Ok(coeffs)
    }

    /// The linear map of one step with coefficients frozen from another run.
    pub fn step_frozen(&self, f: &mut [Vec<f64>], outflow: &mut [f64], coeffs: &Coefficients, dt: f64) {
        self.transport(f, outflow, 0.5 * dt, &coeffs.pivot);
        self.relax(f, coeffs, dt);
        self.transport(f, outflow, 0.5 * dt, &coeffs.pivot);
    }


    /// Fails when any node's mass has drifted from `rho0` by more than `limit`
    /// (relative), after crediting tracked outflow when `credit_outflow`.
    pub fn check_mass(&self, report: &DiagnosticsReport, limit: f64) -> Result<()> {
        for (i, node) in report.nodes.iter().enumerate() {
            let rho = self.rho0.values[i];
            let drift = (node.mass - rho).abs() / rho;
            if !(drift <= limit) {
                return Err(Error::MassDrift { node: i, drift, limit });
            }
        }
        Ok(())
    }

    /// Advances to `t_end`, reporting every `stride` time units (and at the
    /// end). The initial state is always the first entry.
    pub fn run(
        &self,
        state: &mut KineticState,
        t_end: f64,
        dt: f64,
        stride: f64,
        observers: &mut [&mut dyn Observer],
    ) -> Result<Vec<DiagnosticsReport>> {
        let schedule = Schedule::new(state.t, t_end, dt, stride)?;
        let mut out = Vec::with_capacity(schedule.snapshots() + 1);
        let first = self.report(state);
        for obs in observers.iter_mut() {
            obs.observe(self, state, &first)?;
        }
        out.push(first);
        for step in 1..=schedule.steps {
            self.step(state, schedule.dt)?;
            state.t = schedule.time(step);
            if schedule.is_snapshot(step) {
                let report = self.report(state);
                self.check_mass(&report, MASS_DRIFT_LIMIT)?;
                for obs in observers.iter_mut() {
                    obs.observe(self, state, &report)?;
                }
                out.push(report);
            }
        }
        Ok(out)
    }
}

/// Fixed step count and snapshot cadence between two times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub dt: f64,
    pub stride_steps: usize,
}

impl Schedule {
    pub fn new(t0: f64, t_end: f64, dt: f64, stride: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if t_end < t0 {
            return Err(invalid("t_end", "must not precede the current time"));
        }
        let steps = ((t_end - t0) / dt - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { dt } else { (t_end - t0) / steps as f64 };
        let stride_steps = if stride > 0.0 { ((stride / dt).round() as usize).max(1) } else { usize::MAX };
        Ok(Self {
            t0,
            t_end,
            steps,
            dt,
            stride_steps,
        })
    }

    pub fn is_snapshot(&self, step: usize) -> bool {
        step == self.steps || step % self.stride_steps == 0
    }

    pub fn snapshots(&self) -> usize {
        (1..=self.steps).filter(|&s| self.is_snapshot(s)).count()
    }

    /// Exact at both ends, free of accumulated rounding.
    pub fn time(&self, step: usize) -> f64 {
        if step >= self.steps {
            return self.t_end;
        }
        self.t0 + (self.t_end - self.t0) * (step as f64 / self.steps as f64)
    }
}

/// Closed-form scalars of `dv = -kappa v dt + ... + sqrt(2) dB` over `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuFlow {
    /// `exp(-kappa dt)`
    pub decay: f64,
    /// `(1 - exp(-kappa dt)) / kappa`, the weight of the constant drift.
    pub phi1: f64,
    /// Standard deviation of the transition kernel.
    pub std: f64,
}

impl OuFlow {
    pub fn new(kappa: f64, dt: f64) -> Self {
        let x = kappa * dt;
        let (phi1, var) = if x.abs() < 1e-12 {
            (dt, 2.0 * dt)
        } else {
            (-(-x).exp_m1() / kappa, -(-2.0 * x).exp_m1() / kappa)
        };
        Self {
            decay: (-x).exp(),
            phi1,
            std: var.sqrt(),
        }
    }
}

/// Below this kernel width (in cells) the sampled Gaussian no longer
/// reproduces its own variance; a moment-matching stencil takes over.
const RESOLVED_WIDTH_SQ: f64 = 0.75;
/// Half window of the sampled kernel in standard deviations.
const KERNEL_REACH: f64 = 10.0;

/// Spreads `mass` around fractional cell position `u` with standard
/// deviation `sigma` (both in cell units). Weights are nonnegative and sum
/// to one, so mass is conserved; first and second moments match the
/// continuous Gaussian away from the boundary.
#[cfg(test)]
fn deposit(out: &mut [f64], weights: &mut Vec<f64>, mass: f64, u: f64, sigma: f64) {
    deposit_with(out, weights, mass, u, &Spread::new(sigma));
}

/// Width-dependent constants of a Gaussian deposit, shared by a whole column.
struct Spread {
    sigma: f64,
    s2: f64,
    inv: f64,
    q: f64,
    q6: f64,
    q16: f64,
}

impl Spread {
    fn new(sigma: f64) -> Self {
        let s2 = sigma * sigma;
        let inv = 1.0 / (2.0 * s2);
        let q = (-2.0 * inv).exp();
        Self {
            sigma,
            s2,
            inv,
            q,
            q6: q.powi(6),
            q16: q.powi(16),
        }
    }
}

fn deposit_with(out: &mut [f64], weights: &mut Vec<f64>, mass: f64, u: f64, sp: &Spread) {
    let n = out.len() as isize;
    let (sigma, s2, inv, q, q6, q16) = (sp.sigma, sp.s2, sp.inv, sp.q, sp.q6, sp.q16);
    if s2 >= RESOLVED_WIDTH_SQ {
        let lo = ((u - KERNEL_REACH * sigma).floor() as isize).max(0);
        let hi = ((u + KERNEL_REACH * sigma).ceil() as isize).min(n - 1);
        if lo > hi {
            out[if u < 0.0 { 0 } else { (n - 1) as usize }] += mass;
            return;
        }
        let d0 = lo as f64 - u;
        let g0 = (-d0 * d0 * inv).exp();
        let r0 = (-(2.0 * d0 + 1.0) * inv).exp();
        let start = lo as usize;
        let len = (hi - lo + 1) as usize;
        // Gaussian weights by recurrence, g_{i+1} = g_i r_i and r_{i+1} = r_i q,
        // run as four interleaved chains: g_{i+4} = g_i R_i, R_i = r_i^4 q^6.
        let mut g = [0.0; 4];
        let mut big_r = [0.0; 4];
        let (mut gi, mut ri) = (g0, r0);
        for l in 0..4 {
            g[l] = gi;
            big_r[l] = ri.powi(4) * q6;
            gi *= ri;
            ri *= q;
        }
        weights.clear();
        weights.resize(len.next_multiple_of(4), 0.0);
        for block in weights.chunks_exact_mut(4) {
            for l in 0..4 {
                block[l] = g[l];
                g[l] *= big_r[l];
                big_r[l] *= q16;
            }
        }
        let weights = &weights[..len];
        let z: f64 = weights.iter().sum();
        let scale = mass / z;
        for (o, wt) in out[start..start + len].iter_mut().zip(weights) {
            *o += wt * scale;
        }
        return;
    }
    let clamp = |i: isize| i.clamp(0, n - 1) as usize;
    let center = u.round();
    let delta = u - center;
    let ad = delta.abs();
    let ic = center as isize;
    if s2 >= ad * (1.0 - ad) {
        let pm = 0.5 * (delta * delta + s2 - delta);
        let pp = 0.5 * (delta * delta + s2 + delta);
        let p0 = 1.0 - delta * delta - s2;
        out[clamp(ic - 1)] += mass * pm;
        out[clamp(ic)] += mass * p0;
        out[clamp(ic + 1)] += mass * pp;
    } else {
        let base = u.floor();
        let theta = u - base;
        let ib = base as isize;
        out[clamp(ib)] += mass * (1.0 - theta);
        out[clamp(ib + 1)] += mass * theta;
    }
}

struct NodeFlow {
    decay: f64,
    std: f64,
    phi1: f64,
    /// Column-independent part of the mean map's offset.
    shift: f64,
}

/// `(1 - exp(-k s)) / k`, continuous at `k = 0`.
pub fn phi1(k: f64, s: f64) -> f64 {
    let x = k * s;
    if x.abs() < 1e-12 {
        s
    } else {
        -(-x).exp_m1() / k
    }
}

/// Pushes one voltage column through the Gaussian transition
/// `v -> N(v decay + shift, std^2)`, in place. `out` is scratch of length `n_v`.
pub fn gaussian_remap(g: &PhaseGrid, col: &mut [f64], out: &mut [f64], decay: f64, shift: f64, std: f64) {
    if col.iter().all(|&x| x == 0.0) {
        return;
    }
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut weights = Vec::with_capacity(g.n_v + 4);
    let spread = Spread::new(std / g.dv);
    for (j, &mass) in col.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let target = g.v_centers[j] * decay + shift;
        deposit_with(out, &mut weights, mass, (target - g.v_centers[0]) / g.dv, &spread);
    }
    for (c, &o) in col.iter_mut().zip(out.iter()) {
        *c = if o < UNDERFLOW { 0.0 } else { o };
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Flux-splitting MUSCL with minmod slopes on the split fluxes, zero inflow.
/// Writes `-c (F_{j+1/2} - F_{j-1/2})` into `inc`; returns the outflow.
fn muscl_increment(src: &[f64], vel: impl Fn(usize) -> f64, c: f64, inc: &mut [f64]) -> f64 {
    let n = src.len();
    let plus = |j: isize| -> f64 {
        if j < 0 || j >= n as isize {
            0.0
        } else {
            vel(j as usize).max(0.0) * src[j as usize]
        }
    };
    let minus = |j: isize| -> f64 {
        if j < 0 || j >= n as isize {
            0.0
        } else {
            vel(j as usize).min(0.0) * src[j as usize]
        }
    };
    let flux = |j: isize| -> f64 {
        let fp = plus(j) + 0.5 * minmod(plus(j + 1) - plus(j), plus(j) - plus(j - 1));
        let fm = minus(j + 1) - 0.5 * minmod(minus(j + 2) - minus(j + 1), minus(j + 1) - minus(j));
        fp + fm
    };
    let mut left = flux(-1);
    let first = left;
    for j in 0..n {
        let right = flux(j as isize);
        inc[j] = -c * (right - left);
        left = right;
    }
    c * (left - first)
}

fn flush_underflow(f: &mut [f64]) {
    for x in f.iter_mut() {
        if *x < UNDERFLOW {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drift;
    use crate::phase_grid::{moment, GridSpec};
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, half: f64) -> PhaseGrid {
        PhaseGrid::new(&GridSpec {
            v_center: 0.0,
            v_half_width: half,
            n_v: n,
            w_center: 0.0,
            w_half_width: half,
            n_w: n,
        })
        .unwrap()
    }

    fn model(params: ModelParams, g: PhaseGrid, nodes: usize, kernel: Kernel) -> KineticModel {
        let rho = SpatialField::constant(nodes, 1.0).unwrap();
        KineticModel::new(params, g, rho, &kernel, SolverOptions::default()).unwrap()
    }

    fn slice_moments(g: &PhaseGrid, col: &[f64]) -> (f64, f64, f64) {
        let m0: f64 = col.iter().sum();
        let m1: f64 = col.iter().zip(&g.v_centers).map(|(f, v)| f * v).sum::<f64>() / m0;
        let m2: f64 = col.iter().zip(&g.v_centers).map(|(f, v)| f * (v - m1).powi(2)).sum::<f64>() / m0;
        (m0, m1, m2)
    }

    #[test]
    fn ou_flow_small_kappa_limit() {
        let a = OuFlow::new(1e-14, 0.1);
        assert_abs_diff_eq!(a.phi1, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(a.std * a.std, 0.2, epsilon = 1e-12);
        let b = OuFlow::new(20.0, 0.01);
        assert_abs_diff_eq!(b.decay, (-0.2f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.std * b.std, (1.0 - (-0.4f64).exp()) / 20.0, epsilon = 1e-15);
    }

    #[test]
    fn deposit_conserves_and_matches_moments() {
        for &(u, sigma) in &[(50.3, 2.0), (50.0, 1.0), (49.7, 0.5), (50.45, 0.2), (50.1, 0.05)] {
            let mut out = vec![0.0; 101];
            deposit(&mut out, &mut Vec::new(), 2.0, u, sigma);
            let m0: f64 = out.iter().sum();
            let m1: f64 = out.iter().enumerate().map(|(i, x)| i as f64 * x).sum::<f64>() / m0;
            let m2: f64 = out.iter().enumerate().map(|(i, x)| (i as f64 - m1).powi(2) * x).sum::<f64>() / m0;
            assert_abs_diff_eq!(m0, 2.0, epsilon = 1e-13);
            assert_abs_diff_eq!(m1, u, epsilon = 1e-6);
            assert!(out.iter().all(|&x| x >= 0.0));
            if sigma * sigma >= (u - u.round()).abs() * (1.0 - (u - u.round()).abs()) {
                assert_abs_diff_eq!(m2, sigma * sigma, epsilon = 1e-6);
            } else {
                assert!(m2 >= sigma * sigma);
            }
        }
    }

    fn pure_ou_column(g: &PhaseGrid, col: &mut [f64], lambda: f64, target: f64, dt: f64) {
        let decay = (-lambda * dt).exp();
        let var = -(-2.0 * lambda * dt).exp_m1() / lambda;
        let mut out = vec![0.0; g.n_v];
        gaussian_remap(g, col, &mut out, decay, target * (1.0 - decay), var.sqrt());
    }

    #[test]
    fn ou_kernel_gaussian_moments_exact() {
        let g = grid(192, 4.0);
        let (mu, var, target, lambda, dt) = (0.4, 0.09, 0.1, 20.0, 0.01);
        let mut col: Vec<f64> = g.v_centers.iter().map(|&v| gaussian(v, mu, var)).collect();
        let (m0_in, _, _) = slice_moments(&g, &col);
        pure_ou_column(&g, &mut col, lambda, target, dt);
        let (m0, m1, m2) = slice_moments(&g, &col);
        let decay = (-lambda * dt).exp();
        assert_abs_diff_eq!(m0, m0_in, epsilon = 1e-12 * m0_in);
        assert_abs_diff_eq!(m1, target + (mu - target) * decay, epsilon = 1e-10);
        assert_abs_diff_eq!(m2, var * decay * decay + (1.0 - decay * decay) / lambda, epsilon = 1e-10);
    }

    #[test]
    fn ou_kernel_stationary_slice_fixed() {
        let g = grid(192, 4.0);
        let (lambda, target) = (20.0, 0.3);
        let mut col: Vec<f64> = g.v_centers.iter().map(|&v| gaussian(v, target, 1.0 / lambda)).collect();
        let before = col.clone();
        pure_ou_column(&g, &mut col, lambda, target, 0.02);
        let maxf = before.iter().cloned().fold(0.0, f64::max);
        for (a, b) in col.iter().zip(&before) {
            assert!((a - b).abs() <= 1e-10 * maxf, "{a} vs {b}");
        }
    }

    #[test]
    fn relaxation_mean_follows_closed_form_path() {
        // Nonlocal coupling and the cubic's tangent both enter the
        // relaxation flow; the node mean must solve m' = -(S - N1) m + G + N0 - W.
        let params = ModelParams::fitzhugh_nagumo(0.05).unwrap();
        let g = grid(160, 4.0);
        let m = model(params, g.clone(), 2, Kernel::exponential(1.0, 0.8));
        let v0 = SpatialField::constant(2, 0.6).unwrap();
        let w0 = SpatialField::constant(2, 0.3).unwrap();
        let s = m.initialize_well_prepared(&v0, &w0, 0.5).unwrap();
        let dt = 0.05;
        let coeffs = m.coefficients(&s.f, dt, &[0.6, 0.6]);
        let mut f = s.f.clone();
        m.relax(&mut f, &coeffs, dt);
        let after = m.node_means(&f);
        for i in 0..2 {
            // Tangent of v - v^3 at p: slope 1 - 3p^2, intercept 2p^3.
            let p = 0.6f64;
            let mu = m.kernel_mass[i] - (1.0 - 3.0 * p * p);
            let c = coeffs.coupling[i] + 2.0 * p.powi(3) - coeffs.w_mean[i];
            let rhs = |x: f64| -mu * x + c;
            let mut x = coeffs.center[i];
            let n = 1000;
            let h = dt / n as f64;
            for _ in 0..n {
                let k1 = rhs(x);
                let k2 = rhs(x + 0.5 * h * k1);
                let k3 = rhs(x + 0.5 * h * k2);
                let k4 = rhs(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            assert_abs_diff_eq!(after[i].0, x, epsilon = 1e-9);
            assert_abs_diff_eq!(m.mean_path(i, &coeffs, dt), x, epsilon = 1e-12);
            assert_abs_diff_eq!(after[i].1, coeffs.w_mean[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn ou_substep_tiny_dt_is_near_identity() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(64, 4.0);
        let m = model(params, g.clone(), 1, Kernel::zero());
        let v0 = SpatialField::constant(1, 0.5).unwrap();
        let w0 = SpatialField::constant(1, 0.0).unwrap();
        let mut s = m.initialize_well_prepared(&v0, &w0, 0.5).unwrap();
        let before = s.f[0].clone();
        let dt = 1e-7;
        m.ou_relaxation_substep(&mut s, dt).unwrap();
        let l1: f64 = s.f[0].iter().zip(&before).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.cell_area;
        assert!(l1 < 1e-3, "l1 change {l1}");
    }

    #[test]
    fn initialization_variance_and_mass() {
        let params = ModelParams::fitzhugh_nagumo(0.05).unwrap();
        let g = grid(192, 4.0);
        let m = model(params, g.clone(), 3, Kernel::zero());
        let v0 = SpatialField::constant(3, 0.0).unwrap();
        let w0 = SpatialField::constant(3, 0.0).unwrap();
        let s = m.initialize_well_prepared(&v0, &w0, 0.5).unwrap();
        for fi in &s.f {
            let mass = moment(&g, fi, |_, _| 1.0).unwrap();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-13);
        }
        let var = moment(&g, &s.f[0], |v, _| v * v).unwrap();
        assert!((var / 0.05 - 1.0).abs() < 0.02);
        for eps in [0.1, 0.05] {
            let m = model(ModelParams::fitzhugh_nagumo(eps).unwrap(), g.clone(), 1, Kernel::zero());
            let s = m
                .initialize_well_prepared(&SpatialField::constant(1, 0.7).unwrap(), &SpatialField::constant(1, 0.2).unwrap(), 0.5)
                .unwrap();
            let d2 = m.node_moments(&s.f[0]).d2;
            assert!((d2 / eps - 1.0).abs() < 0.05, "{d2}");
        }
    }

    #[test]
    fn initialization_rejects_edge_data() {
        let params = ModelParams::fitzhugh_nagumo(0.05).unwrap();
        let m = model(params, grid(64, 4.0), 1, Kernel::zero());
        let v0 = SpatialField::constant(1, 3.5).unwrap();
        let w0 = SpatialField::constant(1, 0.0).unwrap();
        assert!(m.initialize_well_prepared(&v0, &w0, 0.5).is_err());
    }

    #[test]
    fn zero_drift_transport_is_identity() {
        // Linear N has no transported part; b is as small as validation allows.
        let params = ModelParams::new(0.0, 1e-300, 0.0, 0.1, 0.5, Drift::linear(1.0)).unwrap();
        let g = grid(32, 2.0);
        let m = model(params, g.clone(), 1, Kernel::zero());
        let f0: Vec<f64> = (0..g.len()).map(|i| 1.0 + (i % 7) as f64).collect();
        let mut s = KineticState {
            t: 0.0,
            f: vec![f0.clone()],
            v_field: vec![0.0],
            w_field: vec![0.0],
            outflow: vec![0.0],
        };
        m.transport_substep(&mut s, 0.01).unwrap();
        assert_eq!(s.f[0], f0);
        assert_eq!(s.outflow[0], 0.0);
    }

    #[test]
    fn w_advection_shifts_bump() {
        // A = c constant: a = 0, b tiny, c = 1.
        let params = ModelParams::new(0.0, 1e-12, 1.0, 0.1, 0.5, Drift::linear(1.0)).unwrap();
        let g = grid(256, 4.0);
        let m = model(params, g.clone(), 1, Kernel::zero());
        let bump = |w: f64| (-(w / 0.5).powi(2)).exp();
        let mut s = KineticState {
            t: 0.0,
            f: vec![g.sample(|_, w| bump(w))],
            v_field: vec![0.0],
            w_field: vec![0.0],
            outflow: vec![0.0],
        };
        let dt = 0.8 * g.dw;
        m.transport_substep(&mut s, dt).unwrap();
        let exact = g.sample(|_, w| bump(w - dt));
        let l1: f64 = s.f[0].iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.cell_area;
        let total: f64 = exact.iter().sum::<f64>() * g.cell_area;
        // One-step upwind error is O(dw^2) per unit shift, well inside one cell.
        assert!(l1 / total < g.dw, "relative l1 {}", l1 / total);
        let w_mean = moment(&g, &s.f[0], |_, w| w).unwrap() / total;
        assert_abs_diff_eq!(w_mean, dt, epsilon = 1e-12);
    }

    #[test]
    fn cfl_violation_reported() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(64, 4.0);
        let m = model(params, g, 1, Kernel::zero());
        let mut s = m
            .initialize_well_prepared(&SpatialField::constant(1, 0.0).unwrap(), &SpatialField::constant(1, 0.0).unwrap(), 0.5)
            .unwrap();
        let dt = 2.0 * m.cfl_dt(s.v_field[0]);
        assert!(matches!(m.transport_substep(&mut s, dt), Err(Error::CflViolation { .. })));
        let ok = 0.5 * m.cfl_dt(s.v_field[0]);
        assert!(m.transport_substep(&mut s, ok).is_ok());
    }

    #[test]
    fn step_conserves_mass_up_to_outflow() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(48, 3.0);
        let m = model(params, g.clone(), 2, Kernel::exponential(1.0, 1.0));
        let v0 = SpatialField::constant(2, 1.0).unwrap();
        let w0 = SpatialField::constant(2, 0.0).unwrap();
        let mut s = m.initialize_well_prepared(&v0, &w0, 0.4).unwrap();
        // push mass toward the boundary to get nonzero outflow
        for _ in 0..20 {
            let before: Vec<f64> = s.f.iter().map(|fi| fi.iter().sum::<f64>() * g.cell_area).collect();
            let out_before = s.outflow.clone();
            m.step(&mut s, 0.01).unwrap();
            for i in 0..2 {
                let after = s.f[i].iter().sum::<f64>() * g.cell_area;
                let lost = s.outflow[i] - out_before[i];
                assert_abs_diff_eq!(before[i] - lost, after, epsilon = 1e-12);
            }
        }
        assert!(s.f.iter().flatten().all(|&x| x >= 0.0));
    }

    #[test]
    fn muscl_runs_and_conserves() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(48, 3.0);
        let rho = SpatialField::constant(1, 1.0).unwrap();
        let opts = SolverOptions {
            transport: TransportScheme::Muscl,
            ..SolverOptions::default()
        };
        let m = KineticModel::new(params, g.clone(), rho, &Kernel::zero(), opts).unwrap();
        let mut s = m
            .initialize_well_prepared(&SpatialField::constant(1, 1.0).unwrap(), &SpatialField::constant(1, 0.0).unwrap(), 0.5)
            .unwrap();
        for _ in 0..10 {
            m.step(&mut s, 0.01).unwrap();
        }
        let mass = s.f[0].iter().sum::<f64>() * g.cell_area + s.outflow[0];
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn schedule_lands_on_end() {
        let s = Schedule::new(0.0, 1.0, 0.003, 0.1).unwrap();
        assert_abs_diff_eq!(s.time(s.steps), 1.0, epsilon = 1e-12);
        assert!(s.dt <= 0.003);
        let empty = Schedule::new(0.5, 0.5, 0.01, 0.1).unwrap();
        assert_eq!(empty.steps, 0);
        assert!(Schedule::new(1.0, 0.5, 0.01, 0.1).is_err());
    }

    #[test]
    fn run_with_zero_span_returns_initial_only() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(32, 3.0);
        let m = model(params, g, 1, Kernel::zero());
        let mut s = m
            .initialize_well_prepared(&SpatialField::constant(1, 0.5).unwrap(), &SpatialField::constant(1, 0.0).unwrap(), 0.4)
            .unwrap();
        let traj = m.run(&mut s, 0.0, 0.01, 0.1, &mut []).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].t, 0.0);
    }
}
