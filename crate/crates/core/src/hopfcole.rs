//! Hopf-Cole diagnostics of concentrating kinetic solutions.
//!
//! ```text
//! phi    = eps ln( sqrt(2 pi eps / rho0) f )
//! phi1   = (phi + rho0 |v - V|^2 / 2) / eps
//! phibar = n(v) - n(V) - (v - V) [N(V) + (w - W) + E + S (v - V) / 2]
//! chi+-  = phibar +- (psi + m(t))
//! psi    = alpha0 |v - V|^2 / 2 + alpha(t) |w - W|^2 / 2
//! ```
//!
//! `S = Psi * rho0`. For `f = sqrt(rho0 / (2 pi eps)) exp(-rho0 |v - V|^2 / (2 eps) + chi)`
//! the first-order Hamilton-Jacobi residual below equals `(L f) / f`, where
//! `L` is the kinetic operator, whenever `V` follows the eps-level macro
//! equation. A nonnegative residual therefore makes `f` a supersolution.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinetic::{DiagnosticsReport, KineticModel, KineticState, Schedule, UNDERFLOW};
use crate::model::ModelParams;
use crate::phase_grid::PhaseGrid;

/// Default mask floor relative to `max f`.
pub const FLOOR_RELATIVE: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct HopfColeField {
    /// `phi^eps` on the mask, NaN elsewhere.
    pub phi: Vec<f64>,
    pub mask: Vec<bool>,
    pub floor: f64,
}

impl HopfColeField {
    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// `sqrt(rho0 / (2 pi eps)) exp(phi / eps)` on the mask, 0 elsewhere.
    pub fn reconstruct(&self, rho: f64, eps: f64) -> Vec<f64> {
        let c = (rho / (2.0 * std::f64::consts::PI * eps)).sqrt();
        self.phi
            .iter()
            .zip(&self.mask)
            .map(|(&p, &m)| if m { c * (p / eps).exp() } else { 0.0 })
            .collect()
    }
}

/// Hopf-Cole transform of one node's density. `floor = None` uses
/// [`FLOOR_RELATIVE`] times `max f`.
pub fn hopf_cole(f: &[f64], rho: f64, eps: f64, floor: Option<f64>) -> Result<HopfColeField> {
    let floor = match floor {
        Some(x) if x > 0.0 => x,
        Some(x) => return Err(invalid("floor", format!("must be positive, got {x}"))),
        None => {
            let top = f.iter().cloned().fold(0.0, f64::max);
            if top > 0.0 {
                FLOOR_RELATIVE * top
            } else {
                f64::MIN_POSITIVE
            }
        }
    };
    let scale = (2.0 * std::f64::consts::PI * eps / rho).sqrt();
    let mask: Vec<bool> = f.iter().map(|&x| x > floor).collect();
    let phi = f
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| if m { eps * (scale * x).ln() } else { f64::NAN })
        .collect();
    Ok(HopfColeField { phi, mask, floor })
}

/// `(phi + rho0 |v - V|^2 / 2) / eps`, NaN off the mask.
pub fn phi1(grid: &PhaseGrid, field: &HopfColeField, rho: f64, eps: f64, v_mean: f64) -> Vec<f64> {
    field
        .phi
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let (v, _) = grid.coords(idx);
            (p + 0.5 * rho * (v - v_mean).powi(2)) / eps
        })
        .collect()
}

/// Macroscopic quantities of one node at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroPoint {
    pub v: f64,
    pub w: f64,
    /// `E(f^eps)`
    pub error: f64,
    /// `S = (Psi * rho0)(x)`
    pub kernel_mass: f64,
    /// `G = (Psi * (rho0 V))(x)`
    pub coupling: f64,
}

pub fn phi1_bar_at(params: &ModelParams, p: &MacroPoint, v: f64, w: f64) -> f64 {
    let dv = v - p.v;
    params.primitive_n(v) - params.primitive_n(p.v) - dv * (params.drift_n(p.v) + (w - p.w) + p.error + 0.5 * p.kernel_mass * dv)
}

pub fn phi1_bar(params: &ModelParams, grid: &PhaseGrid, p: &MacroPoint) -> Vec<f64> {
    grid.sample(|v, w| phi1_bar_at(params, p, v, w))
}

/// Constructor scalars of the sub/super-solution pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub alpha0: f64,
    pub m0: f64,
    /// Amplitude of the growing part of `m(t)`.
    pub c: f64,
}

impl Envelope {
    pub fn new(alpha0: f64, m0: f64, c: f64) -> Result<Self> {
        if !(alpha0 > 0.0) {
            return Err(Error::NonPositiveAlpha0(alpha0));
        }
        Ok(Self { alpha0, m0, c })
    }

    /// `alpha0 e^{2kt} + (e^{2kt} - 1)/k` with `k = |a| + b`; solves
    /// `alpha' = 2 k alpha + 2`.
    pub fn alpha(&self, params: &ModelParams, t: f64) -> f64 {
        let k = growth(params);
        let e = (2.0 * k * t).exp();
        self.alpha0 * e + (2.0 * k * t).exp_m1() / k
    }

    /// `m0 + C e^{6kt}`
    pub fn m(&self, params: &ModelParams, t: f64) -> f64 {
        self.m0 + self.c * (6.0 * growth(params) * t).exp()
    }

    pub fn psi(&self, params: &ModelParams, p: &MacroPoint, t: f64, v: f64, w: f64) -> f64 {
        0.5 * self.alpha0 * (v - p.v).powi(2) + 0.5 * self.alpha(params, t) * (w - p.w).powi(2)
    }

    /// `(chi-, chi+)` at one phase point.
    pub fn chi_at(&self, params: &ModelParams, p: &MacroPoint, t: f64, v: f64, w: f64) -> (f64, f64) {
        let bar = phi1_bar_at(params, p, v, w);
        let spread = self.psi(params, p, t, v, w) + self.m(params, t);
        (bar - spread, bar + spread)
    }
}

/// `|a| + b`
pub fn growth(params: &ModelParams) -> f64 {
    params.a.abs() + params.b
}

/// `(chi-, chi+)` on the grid.
pub fn chi_bounds(params: &ModelParams, grid: &PhaseGrid, p: &MacroPoint, env: &Envelope, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(env.alpha0 > 0.0) {
        return Err(Error::NonPositiveAlpha0(env.alpha0));
    }
    let mut lo = Vec::with_capacity(grid.len());
    let mut hi = Vec::with_capacity(grid.len());
    for &w in &grid.w_centers {
        for &v in &grid.v_centers {
            let (a, b) = env.chi_at(params, p, t, v, w);
            lo.push(a);
            hi.push(b);
        }
    }
    Ok((lo, hi))
}

/// Derivative at `at` of the quadratic through three samples.
pub fn three_point_derivative(times: [f64; 3], values: [f64; 3], at: f64) -> f64 {
    let [t0, t1, t2] = times;
    let l0 = ((at - t1) + (at - t2)) / ((t0 - t1) * (t0 - t2));
    let l1 = ((at - t0) + (at - t2)) / ((t1 - t0) * (t1 - t2));
    let l2 = ((at - t0) + (at - t1)) / ((t2 - t0) * (t2 - t1));
    l0 * values[0] + l1 * values[1] + l2 * values[2]
}

/// Signed residual of the first-order Hamilton-Jacobi equation,
///
/// ```text
/// d_t chi + grad chi . b + div b - d_vv chi - (d_v chi)^2
///     + (rho0 / eps) (v - V) d_v (chi - phibar)
/// ```
///
/// with `b = (N(v) - w - S v + G, A(v, w))` and `div b = N'(v) - S - b`.
/// `chis` holds `chi` at `times`; `at` is one of them. Space derivatives
/// are centered, so the outermost ring is NaN.
pub fn hj_residual_order1(
    params: &ModelParams,
    grid: &PhaseGrid,
    rho: f64,
    chis: [&[f64]; 3],
    times: [f64; 3],
    at: usize,
    p: &MacroPoint,
) -> Result<Vec<f64>> {
    if grid.n_v < 3 || grid.n_w < 3 {
        return Err(Error::BoundaryOnly);
    }
    if chis.iter().any(|c| c.len() != grid.len()) {
        return Err(invalid("chi", "length differs from the grid"));
    }
    if !(times[0] < times[1] && times[1] < times[2]) || at > 2 {
        return Err(invalid("times", "need three increasing times and an index among them"));
    }
    let eps = params.epsilon;
    let chi = chis[at];
    let (nv, nw) = (grid.n_v, grid.n_w);
    let mut out = vec![f64::NAN; grid.len()];
    for k in 1..nw - 1 {
        let w = grid.w_centers[k];
        for j in 1..nv - 1 {
            let idx = grid.index(j, k);
            let v = grid.v_centers[j];
            let dt = three_point_derivative(times, [chis[0][idx], chis[1][idx], chis[2][idx]], times[at]);
            let dv = (chi[idx + 1] - chi[idx - 1]) / (2.0 * grid.dv);
            let dw = (chi[idx + nv] - chi[idx - nv]) / (2.0 * grid.dw);
            let dvv = (chi[idx + 1] - 2.0 * chi[idx] + chi[idx - 1]) / (grid.dv * grid.dv);
            let bar_v = (phi1_bar_at(params, p, grid.v_centers[j + 1], w) - phi1_bar_at(params, p, grid.v_centers[j - 1], w)) / (2.0 * grid.dv);
            let bv = params.drift_n(v) - w - p.kernel_mass * v + p.coupling;
            let bw = params.adaptation(v, w);
            let div = params.drift.derivative(v) - p.kernel_mass - params.b;
            out[idx] = dt + dv * bv + dw * bw + div - dvv - dv * dv + rho / eps * (v - p.v) * (dv - bar_v);
        }
    }
    Ok(out)
}

/// Box `|v - V| <= half_v`, `|w - W| <= half_w` around a macro point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub half_v: f64,
    pub half_w: f64,
}

impl Default for Subdomain {
    fn default() -> Self {
        Self { half_v: 2.0, half_w: 2.0 }
    }
}

impl Subdomain {
    pub fn contains(&self, center: (f64, f64), v: f64, w: f64) -> bool {
        (v - center.0).abs() <= self.half_v && (w - center.1).abs() <= self.half_w
    }
}

/// Macro quantities of every node at every snapshot of a kinetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    pub times: Vec<f64>,
    /// `points[n][i]`: snapshot `n`, node `i`.
    pub points: Vec<Vec<MacroPoint>>,
}

impl MacroSeries {
    pub fn from_reports(model: &KineticModel, reports: &[DiagnosticsReport]) -> Self {
        let points = reports
            .iter()
            .map(|r| {
                let v = r.v_field();
                let g = model.coupling_of(&v);
                r.nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| MacroPoint {
                        v: n.v_mean,
                        w: n.w_mean,
                        error: n.error_term,
                        kernel_mass: model.kernel_mass[i],
                        coupling: g[i],
                    })
                    .collect()
            })
            .collect();
        Self {
            times: reports.iter().map(|r| r.t).collect(),
            points,
        }
    }

    /// Indices of the three snapshots used to differentiate at `n`:
    /// centered inside, one-sided at both ends.
    pub fn stencil(&self, n: usize) -> Option<([usize; 3], usize)> {
        let len = self.times.len();
        if len < 3 {
            return None;
        }
        Some(if n == 0 {
            ([0, 1, 2], 0)
        } else if n + 1 == len {
            ([len - 3, len - 2, len - 1], 2)
        } else {
            ([n - 1, n, n + 1], 1)
        })
    }
}

/// Signs of the envelope residuals over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub c: f64,
    /// `min` of the `chi+` residual over the subdomain; must be `>= -tol`.
    pub min_plus: f64,
    /// `max` of the `chi-` residual over the subdomain; must be `<= tol`.
    pub max_minus: f64,
    pub tol: f64,
    pub certified: bool,
}

/// Per-snapshot extremes of the envelope residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    pub node: usize,
    pub min_plus: f64,
    pub max_minus: f64,
}

/// Residual extremes of `chi+-` at every snapshot with `t <= t_max` and node.
pub fn envelope_residuals(
    params: &ModelParams,
    grid: &PhaseGrid,
    rho: &[f64],
    series: &MacroSeries,
    env: &Envelope,
    sub: &Subdomain,
    t_max: f64,
) -> Result<Vec<ResidualRow>> {
    let mut rows = Vec::new();
    for n in 0..series.times.len() {
        if series.times[n] > t_max + 1e-12 {
            continue;
        }
        let (idx, at) = series
            .stencil(n)
            .ok_or_else(|| Error::MissingSnapshots("need at least three snapshots".into()))?;
        let times = idx.map(|m| series.times[m]);
        let node_rows: Vec<Result<ResidualRow>> = crate::par::map_range(rho.len(), |i| {
            let chis: Vec<(Vec<f64>, Vec<f64>)> = idx
                .iter()
                .map(|&m| chi_bounds(params, grid, &series.points[m][i], env, series.times[m]))
                .collect::<Result<_>>()?;
            let p = &series.points[n][i];
            let plus = hj_residual_order1(params, grid, rho[i], [&chis[0].1, &chis[1].1, &chis[2].1], times, at, p)?;
            let minus = hj_residual_order1(params, grid, rho[i], [&chis[0].0, &chis[1].0, &chis[2].0], times, at, p)?;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (cell, (a, b)) in plus.iter().zip(&minus).enumerate() {
                let (v, w) = grid.coords(cell);
                if a.is_nan() || !sub.contains((p.v, p.w), v, w) {
                    continue;
                }
                lo = lo.min(*a);
                hi = hi.max(*b);
            }
            Ok(ResidualRow {
                t: series.times[n],
                node: i,
                min_plus: lo,
                max_minus: hi,
            })
        });
        for r in node_rows {
            rows.push(r?);
        }
    }
    Ok(rows)
}

fn summarize(c: f64, rows: &[ResidualRow], tol: f64) -> Certificate {
    let min_plus = rows.iter().map(|r| r.min_plus).fold(f64::INFINITY, f64::min);
    let max_minus = rows.iter().map(|r| r.max_minus).fold(f64::NEG_INFINITY, f64::max);
    Certificate {
        c,
        min_plus,
        max_minus,
        tol,
        certified: min_plus >= -tol && max_minus <= tol,
    }
}

/// Largest `C` tried by [`search_c`].
pub const C_CAP: f64 = 1024.0;

/// Doubles `C` from 1 until the residual signs certify on the subdomain,
/// up to [`C_CAP`]. Returns the last attempt whether or not it certified.
#[allow(clippy::too_many_arguments)]
pub fn search_c(
    params: &ModelParams,
    grid: &PhaseGrid,
    rho: &[f64],
    series: &MacroSeries,
    alpha0: f64,
    sub: &Subdomain,
    tol: f64,
    t_max: f64,
) -> Result<(Certificate, Vec<ResidualRow>)> {
    let mut c = 1.0;
    loop {
        let env = Envelope::new(alpha0, 0.0, c)?;
        let rows = envelope_residuals(params, grid, rho, series, &env, sub, t_max)?;
        let cert = summarize(c, &rows, tol);
        if cert.certified || c >= C_CAP {
            return Ok((cert, rows));
        }
        c *= 2.0;
    }
}

/// Raw and normalized concentration statistics of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundStatistic {
    /// `sup |phi + rho0 |v - V|^2 / 2 - eps n(v)|`
    pub raw: f64,
    /// `sup |...| / (eps (1 + |u|^2))`
    pub normalized: f64,
    pub cells: usize,
}

/// Compares `phi^eps` with its limit `-rho0 |v - V|^2 / 2 + eps n(v)` on
/// the mask intersected with a box around the limit state `(V, W)`.
pub fn theorem_bound_check(
    params: &ModelParams,
    grid: &PhaseGrid,
    field: &HopfColeField,
    rho: f64,
    limit: (f64, f64),
    sub: &Subdomain,
) -> Result<BoundStatistic> {
    let eps = params.epsilon;
    let (mut raw, mut normalized, mut cells) = (0.0f64, 0.0f64, 0usize);
    for (idx, (&p, &m)) in field.phi.iter().zip(&field.mask).enumerate() {
        let (v, w) = grid.coords(idx);
        if !m || !sub.contains(limit, v, w) {
            continue;
        }
        let gap = (p + 0.5 * rho * (v - limit.0).powi(2) - eps * params.primitive_n(v)).abs();
        raw = raw.max(gap);
        normalized = normalized.max(gap / (eps * (1.0 + v * v + w * w)));
        cells += 1;
    }
    if cells == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(BoundStatistic { raw, normalized, cells })
}

/// Ordering gaps at one time of the sandwich evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub t: f64,
    /// `min (f+ - f)` over all nodes and cells.
    pub gap_plus: f64,
    /// `min (f - f-)` over all nodes and cells.
    pub gap_minus: f64,
    pub max_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    /// Tolerance factor on `max f`.
    pub tol: f64,
    pub passed: bool,
}

/// Tolerance of the ordering check relative to `max f`.
pub const SANDWICH_TOL: f64 = 1e-10;

fn ordering_row(t: f64, f: &[Vec<f64>], plus: &[Vec<f64>], minus: &[Vec<f64>]) -> SandwichRow {
    let (mut gp, mut gm, mut top) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for ((fi, pi), mi) in f.iter().zip(plus).zip(minus) {
        for ((x, p), m) in fi.iter().zip(pi).zip(mi) {
            gp = gp.min(p - x);
            gm = gm.min(x - m);
            top = top.max(*x);
        }
    }
    SandwichRow {
        t,
        gap_plus: gp,
        gap_minus: gm,
        max_f: top,
    }
}

/// Evolves `f` with the full scheme and `f+-` with the same step maps
/// (coefficients frozen from `f`), recording the ordering gaps every
/// `stride`. `on_snapshot` sees the three densities at every snapshot
/// after the initial one.
#[allow(clippy::too_many_arguments)]
pub fn comparison_sandwich(
    model: &KineticModel,
    state: &mut KineticState,
    mut plus: Vec<Vec<f64>>,
    mut minus: Vec<Vec<f64>>,
    t_end: f64,
    dt: f64,
    stride: f64,
    mut on_snapshot: impl FnMut(&KineticState, &[Vec<f64>], &[Vec<f64>]) -> Result<()>,
) -> Result<SandwichReport> {
    let first = ordering_row(state.t, &state.f, &plus, &minus);
    let tol = SANDWICH_TOL * first.max_f;
    if first.gap_plus < -tol || first.gap_minus < -tol {
        return Err(Error::InitialOrderingViolated(format!(
            "min(f+ - f) = {:e}, min(f - f-) = {:e}",
            first.gap_plus, first.gap_minus
        )));
    }
    let schedule = Schedule::new(state.t, t_end, dt, stride)?;
    let mut rows = vec![first];
    let mut out_p = vec![0.0; plus.len()];
    let mut out_m = vec![0.0; minus.len()];
    let mut passed = true;
    for step in 1..=schedule.steps {
        let coeffs = model.step(state, schedule.dt)?;
        state.t = schedule.time(step);
        model.step_frozen(&mut plus, &mut out_p, &coeffs, schedule.dt);
        model.step_frozen(&mut minus, &mut out_m, &coeffs, schedule.dt);
        let row = ordering_row(state.t, &state.f, &plus, &minus);
        let limit = -SANDWICH_TOL * row.max_f;
        if row.gap_plus < limit || row.gap_minus < limit {
            passed = false;
        }
        if schedule.is_snapshot(step) {
            rows.push(row);
            on_snapshot(state, &plus, &minus)?;
        }
    }
    Ok(SandwichReport {
        rows,
        tol: SANDWICH_TOL,
        passed,
    })
}

/// `f+-(0)` built from `chi+-` at `t = 0` for every node, with `m0` raised
/// until `f- <= f0 <= f+` wherever `f0 > 0`. `f-` is cut to zero where `f0`
/// is. Returns `(f+, f-, envelope)`.
pub fn initial_envelopes(
    model: &KineticModel,
    state: &KineticState,
    points: &[MacroPoint],
    alpha0: f64,
    c: f64,
    margin: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Envelope)> {
    let params = &model.params;
    let g = &model.grid;
    let eps = params.epsilon;
    let probe = Envelope::new(alpha0, 0.0, c)?;
    let t = state.t;
    let log_gauss = |rho: f64, v: f64, p: &MacroPoint| (rho / (2.0 * std::f64::consts::PI * eps)).sqrt().ln() - rho * (v - p.v).powi(2) / (2.0 * eps);
    // m(t) must cover |ln f0 - ln gauss - phibar| - psi at every positive cell.
    let mut need = f64::NEG_INFINITY;
    for (i, fi) in state.f.iter().enumerate() {
        let rho = model.rho0.values[i];
        let p = &points[i];
        for (idx, &x) in fi.iter().enumerate() {
            if x <= 0.0 {
                continue;
            }
            let (v, w) = g.coords(idx);
            let l = x.ln() - log_gauss(rho, v, p);
            let gap = (l - phi1_bar_at(params, p, v, w)).abs() - probe.psi(params, p, t, v, w);
            need = need.max(gap);
        }
    }
    let env = Envelope::new(alpha0, need - probe.m(params, t) + margin, c)?;
    let mut plus = Vec::with_capacity(state.f.len());
    let mut minus = Vec::with_capacity(state.f.len());
    for (i, fi) in state.f.iter().enumerate() {
        let rho = model.rho0.values[i];
        let p = &points[i];
        let (mut fp, mut fm) = (Vec::with_capacity(g.len()), Vec::with_capacity(g.len()));
        for (idx, &x) in fi.iter().enumerate() {
            let (v, w) = g.coords(idx);
            let (lo, hi) = env.chi_at(params, p, t, v, w);
            let base = log_gauss(rho, v, p);
            fp.push((base + hi).exp().min(f64::MAX));
            let m = (base + lo).exp();
            fm.push(if x == 0.0 || m < UNDERFLOW { 0.0 } else { m });
        }
        plus.push(fp);
        minus.push(fm);
    }
    Ok((plus, minus, env))
}

/// `min (chi+ - phi1)` and `min (phi1 - chi-)` over mask and subdomain.
pub fn analytic_gaps(
    params: &ModelParams,
    grid: &PhaseGrid,
    phi1: &[f64],
    mask: &[bool],
    p: &MacroPoint,
    env: &Envelope,
    t: f64,
    sub: &Subdomain,
) -> (f64, f64) {
    let (mut up, mut down) = (f64::INFINITY, f64::INFINITY);
    for (idx, (&x, &m)) in phi1.iter().zip(mask).enumerate() {
        let (v, w) = grid.coords(idx);
        if !m || !sub.contains((p.v, p.w), v, w) {
            continue;
        }
        let (lo, hi) = env.chi_at(params, p, t, v, w);
        up = up.min(hi - x);
        down = down.min(x - lo);
    }
    (up, down)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drift;
    use crate::phase_grid::GridSpec;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> PhaseGrid {
        PhaseGrid::new(&GridSpec {
            n_v: n,
            n_w: n,
            ..GridSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn exact_gaussian_gives_quadratic_phi() {
        let g = grid(32);
        let (rho, eps, vm) = (0.8, 0.05, 0.3);
        let f = g.sample(|v, _| (rho / (2.0 * std::f64::consts::PI * eps)).sqrt() * (-rho * (v - vm).powi(2) / (2.0 * eps)).exp());
        let field = hopf_cole(&f, rho, eps, Some(1e-300)).unwrap();
        for (idx, (&p, &m)) in field.phi.iter().zip(&field.mask).enumerate() {
            if m {
                let (v, _) = g.coords(idx);
                assert_abs_diff_eq!(p, -0.5 * rho * (v - vm).powi(2), epsilon = 1e-12);
            }
        }
        let back = field.reconstruct(rho, eps);
        for (a, b) in back.iter().zip(&f) {
            if *b > field.floor {
                assert!((a / b - 1.0).abs() < 1e-10);
            }
        }
        let p1 = phi1(&g, &field, rho, eps, vm);
        assert!(p1.iter().zip(&field.mask).filter(|(_, &m)| m).all(|(x, _)| x.abs() < 1e-9));
    }

    #[test]
    fn scaling_shifts_phi() {
        let (eps, k) = (0.1f64, 0.3f64);
        let f = vec![0.5, 1.0, 2.0];
        let scaled: Vec<f64> = f.iter().map(|x| x * (k / eps).exp()).collect();
        let a = hopf_cole(&f, 1.0, eps, None).unwrap();
        let b = hopf_cole(&scaled, 1.0, eps, None).unwrap();
        for (x, y) in a.phi.iter().zip(&b.phi) {
            assert_abs_diff_eq!(y - x, k, epsilon = 1e-14);
        }
        let low = hopf_cole(&f, 1.0, eps, Some(10.0)).unwrap();
        assert!(low.is_empty());
        assert!(hopf_cole(&f, 1.0, eps, Some(0.0)).is_err());
    }

    fn point(v: f64, w: f64, error: f64, s: f64) -> MacroPoint {
        MacroPoint {
            v,
            w,
            error,
            kernel_mass: s,
            coupling: 0.0,
        }
    }

    #[test]
    fn phibar_cases() {
        let cubic = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let p = point(0.5, 0.2, 0.01, 0.7);
        for w in [-1.0, 0.0, 3.0] {
            assert_eq!(phi1_bar_at(&cubic, &p, 0.5, w), 0.0);
        }
        let lin = ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, Drift::linear(1.0)).unwrap();
        let q = point(0.4, 0.1, 0.0, 0.0);
        assert_abs_diff_eq!(phi1_bar_at(&lin, &q, 1.1, 0.1), -0.5 * 0.7 * 0.7, epsilon = 1e-15);
        // n(v) = v^2/2 - v^4/4 for N = v - v^3; hand evaluation at (v, w) = (1.2, -0.3).
        let (v, w) = (1.2f64, -0.3f64);
        let n = |x: f64| x * x / 2.0 - x.powi(4) / 4.0;
        let expect = n(v) - n(0.5) - (v - 0.5) * ((0.5 - 0.125) + (w - 0.2) + 0.01 + 0.5 * 0.7 * (v - 0.5));
        assert_abs_diff_eq!(phi1_bar_at(&cubic, &p, v, w), expect, epsilon = 1e-14);
    }

    #[test]
    fn alpha_and_m() {
        let p = ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, Drift::cubic()).unwrap();
        let env = Envelope::new(1.0, 0.5, 2.0).unwrap();
        assert_eq!(env.alpha(&p, 0.0), 1.0);
        let t = 2f64.ln() / 2.0;
        assert_abs_diff_eq!(env.alpha(&p, t), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(env.m(&p, 0.0), 2.5, epsilon = 1e-15);
        assert!(matches!(Envelope::new(0.0, 0.0, 1.0), Err(Error::NonPositiveAlpha0(_))));
        // alpha'/2 - alpha (|a| + b) - 1 = 0
        let q = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let env = Envelope::new(2.5, 0.0, 1.0).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let h = 1e-5;
            let d = (env.alpha(&q, t + h) - env.alpha(&q, t - h)) / (2.0 * h);
            let closure = d / 2.0 - env.alpha(&q, t) * growth(&q) - 1.0;
            assert!(closure.abs() < 1e-8 * env.alpha(&q, t).max(1.0) * 10.0, "{closure}");
        }
    }

    #[test]
    fn chi_gap_is_twice_spread() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(16);
        let p = point(0.8, 0.1, 0.02, 0.6);
        let env = Envelope::new(1.5, 0.3, 1.0).unwrap();
        let (lo, hi) = chi_bounds(&params, &g, &p, &env, 0.4).unwrap();
        let m = env.m(&params, 0.4);
        assert!(lo.iter().zip(&hi).all(|(a, b)| b - a >= 2.0 * m - 1e-12));
        let bad = Envelope {
            alpha0: -1.0,
            m0: 0.0,
            c: 1.0,
        };
        assert!(chi_bounds(&params, &g, &p, &bad, 0.0).is_err());
    }

    #[test]
    fn three_point_derivative_is_exact_on_quadratics() {
        let q = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t;
        let ts = [0.1, 0.25, 0.3];
        for (at, &t) in ts.iter().enumerate() {
            let d = three_point_derivative(ts, ts.map(q), ts[at]);
            assert_abs_diff_eq!(d, 2.0 - 6.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn concentration_statistic_matches_brute_force_and_scales() {
        let params = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let g = grid(16);
        let (rho, limit) = (1.0, (0.5, 0.0));
        let dev = 0.02;
        let phi: Vec<f64> = g.sample(|v, _| -0.5 * rho * (v - limit.0).powi(2) + 0.1 * params.primitive_n(v) + dev);
        let field = HopfColeField {
            phi,
            mask: vec![true; g.len()],
            floor: 1.0,
        };
        let sub = Subdomain::default();
        let s = theorem_bound_check(&params, &g, &field, rho, limit, &sub).unwrap();
        assert_abs_diff_eq!(s.raw, dev, epsilon = 1e-12);
        // Same absolute deviation at half eps doubles the normalized value.
        let half = params.with_epsilon(0.05).unwrap();
        let phi: Vec<f64> = g.sample(|v, _| -0.5 * rho * (v - limit.0).powi(2) + 0.05 * half.primitive_n(v) + dev);
        let field2 = HopfColeField { phi, ..field.clone() };
        let s2 = theorem_bound_check(&half, &g, &field2, rho, limit, &sub).unwrap();
        assert_abs_diff_eq!(s2.normalized, 2.0 * s.normalized, epsilon = 1e-9);
        let empty = HopfColeField {
            mask: vec![false; g.len()],
            ..field
        };
        assert!(matches!(theorem_bound_check(&params, &g, &empty, rho, limit, &sub), Err(Error::EmptyMask)));
    }
}
