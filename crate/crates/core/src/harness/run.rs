//! One kinetic run at a fixed eps, with every diagnostic the rate and
//! envelope checks read back.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{content_hash, write_json, CsvWriter};
use crate::csv_row;
use crate::error::{Error, Result};
use crate::hopfcole::{
    analytic_gaps, comparison_sandwich, hopf_cole, initial_envelopes, phi1, search_c, theorem_bound_check, Certificate, Envelope,
    MacroPoint, MacroSeries,
};
use crate::kinetic::{DiagnosticsReport, KineticModel, KineticState, Observer, Schedule, MASS_DRIFT_LIMIT};
use crate::macro_limit::{eps_macro_reconstruction, sup_distance, MacroState, MacroSystem};

/// Scalar outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epsilon: f64,
    pub t_end: f64,
    pub snapshots: usize,
    /// `sup |phi + rho0 |v - V|^2 / 2 - eps n|` at `t_end`, max over nodes.
    pub theorem_raw: f64,
    pub theorem_normalized: f64,
    /// Largest normalized statistic over all snapshots.
    pub theorem_normalized_max: f64,
    /// `sup_x |U - U^eps|` at `t_end`.
    pub macro_gap: f64,
    pub macro_gap_max: f64,
    /// Max over nodes of `D_2` at `t_end`.
    pub d2_final: f64,
    /// Max over snapshots and nodes of `D_2 / (3 (D_2(0) e^{-2 m t/eps} + eps))`.
    pub d2_bound_ratio: f64,
    pub mass_drift_max: f64,
    pub min_f: f64,
    pub error_max: f64,
    /// Max `|dE/dt|` after the initial layer.
    pub error_rate_max: f64,
    pub eps_macro_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelopes: Option<EnvelopeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSummary {
    pub envelope: Envelope,
    pub certificate: Certificate,
    pub sandwich_passed: bool,
    /// `min (f+ - f) / max f` over the run.
    pub sandwich_gap_plus: f64,
    /// `min (f - f-) / max f` over the run.
    pub sandwich_gap_minus: f64,
    /// `min (chi+ - phi1)` over snapshots, nodes and subdomain.
    pub analytic_gap_plus: f64,
    /// `min (phi1 - chi-)`.
    pub analytic_gap_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub epsilon: f64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    pub config: RunConfig,
}

pub const MANIFEST: &str = "manifest.json";

/// Snapshot times of a schedule, the start included.
pub fn snapshot_times(s: &Schedule) -> Vec<f64> {
    let mut out = vec![s.t0];
    out.extend((1..=s.steps).filter(|&k| s.is_snapshot(k)).map(|k| s.time(k)));
    out
}

/// Writes per-snapshot diagnostics while the solver runs.
struct Recorder<'a> {
    config: &'a RunConfig,
    dir: &'a Path,
    limit: &'a [MacroState],
    reports: Vec<DiagnosticsReport>,
    theorem: CsvWriter,
    moments: CsvWriter,
    distance: CsvWriter,
    last_theorem: (f64, f64),
    normalized_max: f64,
    gap_max: f64,
    mass_drift_max: f64,
    min_f: f64,
    /// Envelope gaps with `m = 0`, one row per snapshot.
    base_gaps: Vec<(f64, f64, f64)>,
    track_gaps: bool,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a RunConfig, dir: &'a Path, limit: &'a [MacroState], track_gaps: bool) -> Result<Self> {
        Ok(Self {
            config,
            dir,
            limit,
            reports: Vec::new(),
            theorem: CsvWriter::create(&dir.join("theorem_bound.csv"), &["t", "statistic", "normalized"])?,
            moments: CsvWriter::create(
                &dir.join("macro_eps.csv"),
                &["t", "x_index", "V", "W", "E", "D2", "mass", "min_f", "max_f"],
            )?,
            distance: CsvWriter::create(&dir.join("macro_distance.csv"), &["t", "sup_distance"])?,
            last_theorem: (f64::NAN, f64::NAN),
            normalized_max: 0.0,
            gap_max: 0.0,
            mass_drift_max: 0.0,
            min_f: f64::INFINITY,
            base_gaps: Vec::new(),
            track_gaps,
        })
    }

    fn finish(mut self) -> Result<Self> {
        self.theorem.flush()?;
        self.moments.flush()?;
        self.distance.flush()?;
        Ok(self)
    }
}

fn macro_point(model: &KineticModel, report: &DiagnosticsReport, coupling: &[f64], i: usize) -> MacroPoint {
    let n = &report.nodes[i];
    MacroPoint {
        v: n.v_mean,
        w: n.w_mean,
        error: n.error_term,
        kernel_mass: model.kernel_mass[i],
        coupling: coupling[i],
    }
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, model: &KineticModel, state: &KineticState, report: &DiagnosticsReport) -> Result<()> {
        let k = self.reports.len();
        let lim = self
            .limit
            .get(k)
            .ok_or_else(|| Error::MissingSnapshots(format!("no limit state for snapshot {k}")))?;
        let params = &model.params;
        let eps = params.epsilon;
        let sub = self.config.checks.subdomain;
        let fields: Vec<Result<(f64, f64, Option<(f64, f64)>)>> = crate::par::map_range(model.nodes(), |i| {
            let rho = model.rho0.values[i];
            let field = hopf_cole(&state.f[i], rho, eps, None)?;
            let st = theorem_bound_check(params, &model.grid, &field, rho, (lim.v[i], lim.w[i]), &sub)?;
            let gaps = if self.track_gaps {
                let coupling = model.coupling_of(&report.v_field());
                let p = macro_point(model, report, &coupling, i);
                let p1 = phi1(&model.grid, &field, rho, eps, p.v);
                let base = Envelope::new(self.config.checks.alpha0, 0.0, 0.0)?;
                Some(analytic_gaps(params, &model.grid, &p1, &field.mask, &p, &base, report.t, &sub))
            } else {
                None
            };
            Ok((st.raw, st.normalized, gaps))
        });
        let (mut raw, mut normalized) = (0.0f64, 0.0f64);
        let (mut up, mut down) = (f64::INFINITY, f64::INFINITY);
        for r in fields {
            let (a, b, g) = r?;
            raw = raw.max(a);
            normalized = normalized.max(b);
            if let Some((u, d)) = g {
                up = up.min(u);
                down = down.min(d);
            }
        }
        if self.track_gaps {
            self.base_gaps.push((report.t, up, down));
        }
        self.theorem.row(csv_row![report.t, raw, normalized])?;
        self.last_theorem = (raw, normalized);
        self.normalized_max = self.normalized_max.max(normalized);
        let eps_state = MacroState {
            t: report.t,
            v: report.v_field(),
            w: report.w_field(),
        };
        let gap = sup_distance(&eps_state, lim);
        self.gap_max = self.gap_max.max(gap);
        self.distance.row(csv_row![report.t, gap])?;
        for (i, n) in report.nodes.iter().enumerate() {
            let drift = (n.mass + report.outflow[i] - model.rho0.values[i]).abs();
            self.mass_drift_max = self.mass_drift_max.max(drift);
            self.min_f = self.min_f.min(n.min_f);
            self.moments
                .row(csv_row![report.t, i, n.v_mean, n.w_mean, n.error_term, n.d2, n.mass, n.min_f, n.max_f])?;
        }
        let out = &self.config.output;
        if out.dump_snapshots || out.dump_phi {
            let name = |stem: &str| self.dir.join(format!("{stem}_{k:04}.csv"));
            let mut fw = if out.dump_snapshots {
                Some(CsvWriter::create(&name("snapshot"), &["x_index", "v", "w", "f"])?)
            } else {
                None
            };
            let mut pw = if out.dump_phi {
                Some(CsvWriter::create(&name("phi"), &["x_index", "v", "w", "phi"])?)
            } else {
                None
            };
            for (i, fi) in state.f.iter().enumerate() {
                let field = hopf_cole(fi, model.rho0.values[i], eps, None)?;
                for (idx, &x) in fi.iter().enumerate() {
                    let (v, w) = model.grid.coords(idx);
                    if let Some(fw) = fw.as_mut() {
                        fw.row(csv_row![i, v, w, x])?;
                    }
                    if let (Some(pw), true) = (pw.as_mut(), field.mask[idx]) {
                        pw.row(csv_row![i, v, w, field.phi[idx]])?;
                    }
                }
            }
            if let Some(fw) = fw {
                fw.finish()?;
            }
            if let Some(pw) = pw {
                pw.finish()?;
            }
        }
        self.reports.push(report.clone());
        Ok(())
    }
}

/// Final `f`, `phi` and the limit profile `-rho0 |v - V|^2 / 2` at one node.
fn write_final_fields(path: &Path, model: &KineticModel, state: &KineticState, v_limit: f64, node: usize) -> Result<()> {
    let eps = model.epsilon();
    let rho = model.rho0.values[node];
    let field = hopf_cole(&state.f[node], rho, eps, None)?;
    let mut w = CsvWriter::create(path, &["x_index", "v", "w", "f", "phi", "phi_limit"])?;
    for (idx, &x) in state.f[node].iter().enumerate() {
        let (v, ww) = model.grid.coords(idx);
        w.row(csv_row![node, v, ww, x, field.phi[idx], -0.5 * rho * (v - v_limit).powi(2)])?;
    }
    w.finish()
}

fn write_macro_limit(path: &Path, traj: &[MacroState]) -> Result<()> {
    let mut w = CsvWriter::create(path, &["t", "x_index", "V", "W"])?;
    for s in traj {
        for i in 0..s.v.len() {
            w.row(csv_row![s.t, i, s.v[i], s.w[i]])?;
        }
    }
    w.finish()
}

/// Runs the kinetic solver at `config.model.epsilon` and writes every output
/// into `dir`. With `envelopes` the run also evolves the sandwich pair and
/// certifies the envelope residuals.
pub fn run_kinetic(config: &RunConfig, dir: &Path, envelopes: bool) -> Result<(RunSummary, Vec<String>)> {
    std::fs::create_dir_all(dir)?;
    let setup = config.setup()?;
    let model = &setup.model;
    let params = &model.params;
    let eps = params.epsilon;
    let sched = &config.schedule;
    let mut state = model.initialize_well_prepared(&setup.v0, &setup.w0, config.initial.sigma_w)?;
    let schedule = Schedule::new(0.0, sched.t_end, sched.dt, sched.stride)?;
    let times = snapshot_times(&schedule);
    let system = MacroSystem::from_kinetic(model);
    let start = MacroState {
        t: 0.0,
        v: setup.v0.values.clone(),
        w: setup.w0.values.clone(),
    };
    let limit = system.integrate_to(&start, &times, sched.macro_dt)?;
    write_macro_limit(&dir.join("macro_limit.csv"), &limit)?;
    let mut files: Vec<String> = ["macro_limit.csv", "macro_eps.csv", "macro_distance.csv", "theorem_bound.csv", "fields_final.csv"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut rec = Recorder::new(config, dir, &limit, envelopes)?;
    let mut sandwich = None;
    if envelopes {
        let first = model.report(&state);
        let coupling = model.coupling_of(&first.v_field());
        let points: Vec<MacroPoint> = (0..model.nodes()).map(|i| macro_point(model, &first, &coupling, i)).collect();
        let (plus, minus, env0) = initial_envelopes(model, &state, &points, config.checks.alpha0, 0.0, config.checks.margin)?;
        rec.observe(model, &state, &first)?;
        let report = comparison_sandwich(model, &mut state, plus, minus, sched.t_end, sched.dt, sched.stride, |s, _, _| {
            let r = model.report(s);
            model.check_mass(&r, MASS_DRIFT_LIMIT)?;
            rec.observe(model, s, &r)
        })?;
        let mut w = CsvWriter::create(&dir.join("sandwich.csv"), &["t", "min_gap_plus", "min_gap_minus", "max_f"])?;
        for r in &report.rows {
            w.row(csv_row![r.t, r.gap_plus, r.gap_minus, r.max_f])?;
        }
        w.finish()?;
        files.push("sandwich.csv".into());
        sandwich = Some((report, env0));
    } else {
        model.run(&mut state, sched.t_end, sched.dt, sched.stride, &mut [&mut rec])?;
    }
    let rec = rec.finish()?;
    let reports = &rec.reports;
    let last_limit = limit.last().expect("schedule has a start");
    write_final_fields(&dir.join("fields_final.csv"), model, &state, last_limit.v[0], 0)?;

    let d2_0: Vec<f64> = reports[0].nodes.iter().map(|n| n.d2).collect();
    let mut d2_ratio = 0.0f64;
    for r in reports {
        for (i, n) in r.nodes.iter().enumerate() {
            let bound = 3.0 * (d2_0[i] * (-2.0 * params.m_star * r.t / eps).exp() + eps);
            d2_ratio = d2_ratio.max(n.d2 / bound);
        }
    }
    let error_max = reports.iter().flat_map(|r| r.nodes.iter().map(|n| n.error_term.abs())).fold(0.0, f64::max);
    let mut error_rate_max = 0.0f64;
    for pair in reports.windows(2) {
        if pair[0].t < config.checks.layer_skip - 1e-12 {
            continue;
        }
        let h = pair[1].t - pair[0].t;
        for (a, b) in pair[0].nodes.iter().zip(&pair[1].nodes) {
            error_rate_max = error_rate_max.max((b.error_term - a.error_term).abs() / h);
        }
    }
    let eps_macro = eps_macro_reconstruction(&system, reports)?;
    let last = reports.last().expect("at least the initial report");
    let final_gap = sup_distance(
        &MacroState {
            t: last.t,
            v: last.v_field(),
            w: last.w_field(),
        },
        last_limit,
    );

    let envelopes = match sandwich {
        None => None,
        Some((report, env0)) => {
            let series = MacroSeries::from_reports(model, reports);
            let sub = &config.checks.subdomain;
            let tol = config.checks.hj_tol;
            let (certificate, rows) = match config.checks.c {
                Some(c) => {
                    let env = Envelope::new(config.checks.alpha0, 0.0, c)?;
                    let rows = crate::hopfcole::envelope_residuals(params, &model.grid, &model.rho0.values, &series, &env, sub, sched.t_end)?;
                    let min_plus = rows.iter().map(|r| r.min_plus).fold(f64::INFINITY, f64::min);
                    let max_minus = rows.iter().map(|r| r.max_minus).fold(f64::NEG_INFINITY, f64::max);
                    let cert = Certificate {
                        c,
                        min_plus,
                        max_minus,
                        tol,
                        certified: min_plus >= -tol && max_minus <= tol,
                    };
                    (cert, rows)
                }
                None => search_c(params, &model.grid, &model.rho0.values, &series, config.checks.alpha0, sub, tol, sched.t_end)?,
            };
            let mut w = CsvWriter::create(&dir.join("hj_certification.csv"), &["t", "x_index", "min_plus", "max_minus"])?;
            for r in &rows {
                w.row(csv_row![r.t, r.node, r.min_plus, r.max_minus])?;
            }
            w.finish()?;
            files.push("hj_certification.csv".into());
            // m(0) = m0 + C stays at the value that ordered the initial data.
            let envelope = Envelope::new(config.checks.alpha0, env0.m0 - certificate.c, certificate.c)?;
            let mut w = CsvWriter::create(&dir.join("envelope_gaps.csv"), &["t", "min_gap_plus", "min_gap_minus"])?;
            let (mut up, mut down) = (f64::INFINITY, f64::INFINITY);
            for &(t, u, d) in &rec.base_gaps {
                let m = envelope.m(params, t);
                w.row(csv_row![t, u + m, d + m])?;
                up = up.min(u + m);
                down = down.min(d + m);
            }
            w.finish()?;
            files.push("envelope_gaps.csv".into());
            let top = report.rows.iter().map(|r| r.max_f).fold(0.0, f64::max);
            Some(EnvelopeSummary {
                envelope,
                certificate,
                sandwich_passed: report.passed,
                sandwich_gap_plus: report.rows.iter().map(|r| r.gap_plus).fold(f64::INFINITY, f64::min) / top,
                sandwich_gap_minus: report.rows.iter().map(|r| r.gap_minus).fold(f64::INFINITY, f64::min) / top,
                analytic_gap_plus: up,
                analytic_gap_minus: down,
            })
        }
    };

    let summary = RunSummary {
        epsilon: eps,
        t_end: last.t,
        snapshots: reports.len(),
        theorem_raw: rec.last_theorem.0,
        theorem_normalized: rec.last_theorem.1,
        theorem_normalized_max: rec.normalized_max,
        macro_gap: final_gap,
        macro_gap_max: rec.gap_max,
        d2_final: last.nodes.iter().map(|n| n.d2).fold(0.0, f64::max),
        d2_bound_ratio: d2_ratio,
        mass_drift_max: rec.mass_drift_max,
        min_f: rec.min_f,
        error_max,
        error_rate_max,
        eps_macro_residual: eps_macro.max_residual(),
        envelopes,
    };
    Ok((summary, files))
}

/// [`run_kinetic`] plus a manifest; failures are recorded, not returned.
pub fn run_and_record(config: &RunConfig, dir: &Path, envelopes: bool) -> RunManifest {
    let clock = Instant::now();
    let outcome = std::fs::create_dir_all(dir).map_err(Error::from).and_then(|_| run_kinetic(config, dir, envelopes));
    let (status, error, summary, files) = match outcome {
        Ok((s, f)) => ("ok".to_string(), None, Some(s), f),
        Err(e) => ("error".to_string(), Some(e.to_string()), None, Vec::new()),
    };
    let manifest = RunManifest {
        epsilon: config.model.epsilon,
        status,
        error,
        config_hash: content_hash(config).unwrap_or_default(),
        wall_time_s: clock.elapsed().as_secs_f64(),
        files,
        summary,
        config: config.clone(),
    };
    if let Err(e) = write_json(&dir.join(MANIFEST), &manifest) {
        eprintln!("cannot write manifest in {}: {e}", dir.display());
    }
    manifest
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-run directory name inside a sweep.
pub fn run_dir(root: &Path, index: usize, eps: f64) -> PathBuf {
    root.join(format!("eps_{index:02}_{eps}"))
}
