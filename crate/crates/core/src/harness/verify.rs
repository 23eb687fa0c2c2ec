//! Pass/fail checks over finished runs and sweeps.

use serde::Serialize;

use super::run::RunManifest;
use super::sweep::{RateFit, SweepManifest};

/// Tolerated per-node mass drift of an accepted run.
pub const MASS_TOL: f64 = 1e-8;
/// Smallest accepted log-log slope.
pub const MIN_SLOPE: f64 = 0.8;
/// Smallest accepted fit quality of the concentration rate.
pub const MIN_R2: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub fn verify_run(m: &RunManifest) -> Vec<Check> {
    let tag = format!("eps={}", m.epsilon);
    let Some(s) = &m.summary else {
        return vec![Check::new(
            format!("{tag} completed"),
            false,
            m.error.clone().unwrap_or_else(|| "no summary".into()),
        )];
    };
    let mut out = vec![
        Check::new(
            format!("{tag} mass conservation"),
            s.mass_drift_max <= MASS_TOL,
            format!("max drift {:.3e} (limit {MASS_TOL:e})", s.mass_drift_max),
        ),
        Check::new(format!("{tag} positivity"), s.min_f >= 0.0, format!("min f {:.3e}", s.min_f)),
        Check::new(
            format!("{tag} D2 bound"),
            s.d2_bound_ratio <= 1.0,
            format!("max D2 / bound = {:.4}", s.d2_bound_ratio),
        ),
    ];
    if let Some(e) = &s.envelopes {
        let c = &e.certificate;
        out.push(Check::new(
            format!("{tag} envelope residual signs"),
            c.certified,
            format!("C = {}, min chi+ residual {:.4e}, max chi- residual {:.4e}, tol {}", c.c, c.min_plus, c.max_minus, c.tol),
        ));
        out.push(Check::new(
            format!("{tag} sandwich ordering"),
            e.sandwich_passed,
            format!("min gaps / max f: plus {:.3e}, minus {:.3e}", e.sandwich_gap_plus, e.sandwich_gap_minus),
        ));
    }
    out
}

fn rate_check(name: &str, fit: &Option<RateFit>, min_r2: Option<f64>) -> Check {
    match fit {
        None => Check::new(name, false, "fewer than 3 usable members".into()),
        Some(f) => Check::new(
            name,
            f.slope >= MIN_SLOPE && min_r2.map_or(true, |r| f.r2 >= r),
            format!("slope {:.4}, r2 {:.4}", f.slope, f.r2),
        ),
    }
}

/// Member checks plus the three rate fits. An empty sweep passes.
pub fn verify_sweep(s: &SweepManifest) -> Vec<Check> {
    let mut out: Vec<Check> = s.runs.iter().flat_map(|r| verify_run(&r.manifest)).collect();
    if s.runs.is_empty() {
        return out;
    }
    out.push(rate_check("concentration rate", &s.rates.theorem, Some(MIN_R2)));
    out.push(rate_check("macroscopic rate", &s.rates.macro_gap, None));
    out.push(rate_check("D2 plateau rate", &s.rates.d2_plateau, None));
    out
}
