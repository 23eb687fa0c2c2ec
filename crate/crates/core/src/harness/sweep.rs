//! Eps sweeps and log-log rate fits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{write_json, CsvWriter};
use super::run::{run_and_record, run_dir, RunManifest};
use crate::csv_row;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares line through `(ln eps, ln statistic)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::DegeneratePairs(format!("{} pairs", pairs.len())));
    }
    if let Some(p) = pairs.iter().find(|(e, s)| !(*e > 0.0 && *s > 0.0 && e.is_finite() && s.is_finite())) {
        return Err(Error::DegeneratePairs(format!("non-positive pair {p:?}")));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegeneratePairs("all eps values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    // A flat line through constant data is a perfect fit.
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepRates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<RateFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_gap: Option<RateFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2_plateau: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepManifest {
    pub runs: Vec<SweepEntry>,
    pub rates: SweepRates,
}

pub const SWEEP_MANIFEST: &str = "sweep.json";

fn wants_envelopes(config: &RunConfig, eps: f64) -> bool {
    config.checks.envelope_epsilons.iter().any(|&e| (e - eps).abs() <= 1e-12 * eps)
}

/// Rate fits over the successful members.
pub fn sweep_rates(runs: &[SweepEntry]) -> SweepRates {
    let pairs = |f: &dyn Fn(&super::run::RunSummary) -> f64| -> Vec<(f64, f64)> {
        runs.iter()
            .filter_map(|r| r.manifest.summary.as_ref().map(|s| (r.epsilon, f(s))))
            .collect()
    };
    SweepRates {
        theorem: fit_rate(&pairs(&|s| s.theorem_raw)).ok(),
        macro_gap: fit_rate(&pairs(&|s| s.macro_gap)).ok(),
        d2_plateau: fit_rate(&pairs(&|s| s.d2_final)).ok(),
    }
}

/// Runs every eps of the sweep as an independent job in its own directory,
/// then fits rates. A failing member is recorded and skipped.
pub fn run_sweep(config: &RunConfig, root: &Path) -> Result<SweepManifest> {
    config.validate()?;
    std::fs::create_dir_all(root)?;
    let jobs: Vec<(usize, f64)> = config.sweep.epsilons.iter().copied().enumerate().collect();
    let runs = crate::par::map_slice(&jobs, |&(i, eps)| {
        let dir = run_dir(root, i, eps);
        let member = config.at_epsilon(eps);
        let manifest = run_and_record(&member, &dir, wants_envelopes(config, eps));
        SweepEntry { epsilon: eps, dir, manifest }
    });
    let rates = sweep_rates(&runs);
    let manifest = SweepManifest { runs, rates };
    write_json(&root.join(SWEEP_MANIFEST), &manifest)?;
    let mut w = CsvWriter::create(&root.join("rates.csv"), &["quantity", "slope", "r2", "pairs"])?;
    for (name, fit) in [
        ("theorem", &manifest.rates.theorem),
        ("macro_gap", &manifest.rates.macro_gap),
        ("d2_plateau", &manifest.rates.d2_plateau),
    ] {
        if let Some(f) = fit {
            w.row(csv_row![name, f.slope, f.r2, f.pairs.len()])?;
        }
    }
    w.finish()?;
    Ok(manifest)
}
