//! Particle runs and their comparison with the kinetic means.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::CsvWriter;
use crate::csv_row;
use crate::error::{Error, Result};
use crate::particles::{ParticleSnapshot, ParticleSystem};

/// Particle ensemble built from a config.
pub fn particle_system(config: &RunConfig) -> Result<ParticleSystem> {
    config.validate()?;
    ParticleSystem::new(config.params()?, &config.rho0()?, &config.space.kernel)
}

/// One seeded ensemble run to `t_end`, snapshots every `stride`.
pub fn particle_trajectory(config: &RunConfig, seed: u64, stride: f64) -> Result<Vec<ParticleSnapshot>> {
    let sys = particle_system(config)?;
    let nodes = config.space.nodes;
    let p = &config.particles;
    let mut ens = sys.init_ensemble(
        p.n,
        &config.initial.v0.field(nodes)?,
        &config.initial.w0.field(nodes)?,
        config.initial.sigma_w,
        seed,
    )?;
    sys.run(&mut ens, config.schedule.t_end, p.dt, stride, p.q)
}

pub fn write_particle_moments(path: &Path, traj: &[ParticleSnapshot]) -> Result<()> {
    let mut w = CsvWriter::create(path, &["t", "x_index", "count", "mean_v", "mean_w", "std_v", "D_q", "M_q"])?;
    for snap in traj {
        for (c, m) in snap.cells.iter().enumerate() {
            w.row(csv_row![snap.t, c, m.count, m.mean_v, m.mean_w, m.std_v, m.d_q, m.m_q])?;
        }
    }
    w.finish()
}

/// One checkpoint of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub t: f64,
    pub cell: usize,
    pub mean_v: f64,
    pub kinetic_v: f64,
    /// `std_v / sqrt(count)`
    pub se_sample: f64,
    /// Spread of the cell mean over independent replicas.
    pub se_replica: f64,
}

impl CrossRow {
    pub fn pass_sample(&self) -> bool {
        (self.mean_v - self.kinetic_v).abs() <= 3.0 * self.se_sample
    }

    pub fn pass_replica(&self) -> bool {
        (self.mean_v - self.kinetic_v).abs() <= 3.0 * self.se_replica
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub rows: Vec<CrossRow>,
    pub cells: usize,
    pub checkpoints: usize,
}

impl CrossValidation {
    /// Passing checkpoints per cell.
    pub fn passes(&self, replica: bool) -> Vec<usize> {
        let mut out = vec![0; self.cells];
        for r in &self.rows {
            if if replica { r.pass_replica() } else { r.pass_sample() } {
                out[r.cell] += 1;
            }
        }
        out
    }

    /// Every cell passes at least `need` checkpoints.
    pub fn accepted(&self, replica: bool, need: usize) -> bool {
        self.passes(replica).iter().all(|&p| p >= need)
    }
}

/// Compares the per-cell mean voltage of the seeded ensemble with the
/// kinetic `V^eps` at `checkpoints` equally spaced times. The replica
/// standard error uses `replicas` ensembles seeded `seed, seed + 1, ...`;
/// the first of them is the one tested.
pub fn cross_validate(config: &RunConfig) -> Result<CrossValidation> {
    let p = &config.particles;
    if p.checkpoints == 0 || p.replicas < 2 {
        return Err(crate::error::invalid("particles", "need checkpoints >= 1 and replicas >= 2"));
    }
    let stride = config.schedule.t_end / p.checkpoints as f64;
    let setup = config.setup()?;
    let model = &setup.model;
    let mut state = model.initialize_well_prepared(&setup.v0, &setup.w0, config.initial.sigma_w)?;
    let reports = model.run(&mut state, config.schedule.t_end, config.schedule.dt, stride, &mut [])?;
    let trajs: Vec<Result<Vec<ParticleSnapshot>>> =
        crate::par::map_range(p.replicas, |r| particle_trajectory(config, config.seed + r as u64, stride));
    let trajs: Vec<Vec<ParticleSnapshot>> = trajs.into_iter().collect::<Result<_>>()?;
    let cells = config.space.nodes;
    let mut rows = Vec::new();
    for (k, rep) in reports.iter().enumerate().skip(1) {
        let snaps: Vec<&ParticleSnapshot> = trajs.iter().map(|t| &t[k]).collect();
        if (snaps[0].t - rep.t).abs() > 1e-9 {
            return Err(Error::MissingSnapshots(format!("particle time {} vs kinetic {}", snaps[0].t, rep.t)));
        }
        for c in 0..cells {
            let means: Vec<f64> = snaps.iter().map(|s| s.cells[c].mean_v).collect();
            let r = means.len() as f64;
            let avg = means.iter().sum::<f64>() / r;
            let var = means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (r - 1.0);
            let own = &snaps[0].cells[c];
            rows.push(CrossRow {
                t: rep.t,
                cell: c,
                mean_v: own.mean_v,
                kinetic_v: rep.nodes[c].v_mean,
                se_sample: own.std_v / (own.count as f64).sqrt(),
                se_replica: var.sqrt(),
            });
        }
    }
    Ok(CrossValidation {
        rows,
        cells,
        checkpoints: reports.len() - 1,
    })
}

pub fn write_cross_validation(path: &Path, cv: &CrossValidation) -> Result<()> {
    let mut w = CsvWriter::create(
        path,
        &["t", "x_index", "mean_v", "kinetic_V", "se_sample", "se_replica", "pass_sample", "pass_replica"],
    )?;
    for r in &cv.rows {
        w.row(csv_row![
            r.t,
            r.cell,
            r.mean_v,
            r.kinetic_v,
            r.se_sample,
            r.se_replica,
            r.pass_sample() as usize,
            r.pass_replica() as usize
        ])?;
    }
    w.finish()
}
