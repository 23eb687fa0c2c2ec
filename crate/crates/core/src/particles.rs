//! Euler-Maruyama simulation of the microscopic network
//!
//! ```text
//! dv_i = (N(v_i) - w_i - (1/n) sum_j Phi_eps(x_i, x_j)(v_i - v_j)) dt + sqrt(2) dB_i
//! dw_i = A(v_i, w_i) dt
//! ```
//!
//! with positions frozen in the spatial cells of the kinetic solver and
//! `Phi_eps(x, y) = (1/eps) 1{same cell} / dx + Psi(x, y)`. Dividing the
//! local part by the cell width makes its mean-field limit the kinetic
//! relaxation `(rho0/eps)(v - V^eps)`.
//!
//! Each neuron owns a ChaCha stream keyed by `(seed, neuron index)`, so the
//! trajectory does not depend on thread count or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{kernel_matrix, Kernel, KernelMatrix, ModelParams, SpatialField};
use crate::par;

/// Bound on `dt * (largest coupling rate)` accepted by [`ParticleSystem::em_step`].
pub const STABILITY_LIMIT: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct Neuron {
    /// Position, fixed for the whole run.
    pub x: f64,
    pub cell: usize,
    pub v: f64,
    pub w: f64,
    rng: ChaCha8Rng,
}

impl Neuron {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub t: f64,
    pub seed: u64,
    pub neurons: Vec<Neuron>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.neurons.iter().map(|n| n.v).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    pub count: usize,
    pub mean_v: f64,
    pub mean_w: f64,
    /// `(1/n_c) sum |v - mean_v|^q`
    pub d_q: f64,
    /// `(1/n_c) sum |(v, w)|^q`
    pub m_q: f64,
    /// Plug-in standard deviation of `v` in the cell.
    pub std_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub t: f64,
    pub cells: Vec<CellMoments>,
}

/// Network parameters over the spatial cells of a [`SpatialField`].
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub params: ModelParams,
    pub cells: SpatialField,
    pub kernel: KernelMatrix,
    /// Brownian forcing on or off; off only for deterministic checks.
    pub noise: bool,
}

impl ParticleSystem {
    pub fn new(params: ModelParams, rho0: &SpatialField, kernel: &Kernel) -> Result<Self> {
        crate::model::check_density(rho0, params.m_star)?;
        Ok(Self {
            kernel: kernel_matrix(kernel, rho0)?,
            cells: rho0.clone(),
            params,
            noise: true,
        })
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    fn cell_edges(&self, c: usize) -> (f64, f64) {
        let nodes = &self.cells.nodes;
        let half = 0.5 * self.cells.quad_weights[c];
        (nodes[c] - half, nodes[c] + half)
    }

    /// Neuron counts per cell: largest-remainder rounding of `n rho0 dx`.
    pub fn allocate(&self, n: usize) -> Vec<usize> {
        let target: Vec<f64> = (0..self.cells.len())
            .map(|c| n as f64 * self.cells.values[c] * self.cells.quad_weights[c] / self.cells.integral())
            .collect();
        let mut counts: Vec<usize> = target.iter().map(|t| t.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (target[a] - target[a].floor(), target[b] - target[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        counts
    }

    /// Stratified positions; `v ~ N(V0, eps/rho0)` and `w ~ N(W0, sigma_w^2)`
    /// per cell, drawn from each neuron's own stream.
    pub fn init_ensemble(&self, n: usize, v0: &SpatialField, w0: &SpatialField, sigma_w: f64, seed: u64) -> Result<Ensemble> {
        if n == 0 {
            return Err(invalid("n", "need at least one neuron"));
        }
        if v0.len() != self.cells.len() || w0.len() != self.cells.len() {
            return Err(invalid("initial", "V0 and W0 must live on the spatial cells"));
        }
        if !(sigma_w >= 0.0) {
            return Err(invalid("sigma_w", "must be nonnegative"));
        }
        let counts = self.allocate(n);
        let mut layout = Vec::with_capacity(n);
        for (c, &k) in counts.iter().enumerate() {
            let (lo, hi) = self.cell_edges(c);
            for s in 0..k {
                layout.push((c, lo + (s as f64 + 0.5) / k as f64 * (hi - lo)));
            }
        }
        let eps = self.params.epsilon;
        let neurons = par::map_range(n, |i| {
            let (cell, x) = layout[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut nrn = Neuron { x, cell, v: 0.0, w: 0.0, rng };
            let sd = (eps / self.cells.values[cell]).sqrt();
            nrn.v = v0.values[cell] + sd * nrn.normal();
            nrn.w = w0.values[cell] + sigma_w * nrn.normal();
            nrn
        });
        Ok(Ensemble { t: 0.0, seed, neurons })
    }

    /// Per-cell counts and voltage sums.
    fn cell_sums(&self, ens: &Ensemble) -> (Vec<usize>, Vec<f64>) {
        let nc = self.cells.len();
        let mut count = vec![0usize; nc];
        let mut sum = vec![0.0; nc];
        for nrn in &ens.neurons {
            count[nrn.cell] += 1;
            sum[nrn.cell] += nrn.v;
        }
        (count, sum)
    }

    /// Largest linear coupling rate felt by any neuron:
    /// `n_c / (n dx eps) + sum_c' Psi_cc' n_c' / n`.
    pub fn coupling_rate(&self, counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let eps = self.params.epsilon;
        (0..counts.len())
            .map(|c| {
                let local = counts[c] as f64 / (n as f64 * self.cells.quad_weights[c] * eps);
                let nonlocal: f64 = (0..counts.len()).map(|d| self.kernel.get(c, d) * counts[d] as f64 / n as f64).sum();
                local + nonlocal
            })
            .fold(0.0, f64::max)
    }

    /// One Euler-Maruyama step.
    pub fn em_step(&self, ens: &mut Ensemble, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let (counts, sums) = self.cell_sums(ens);
        let ratio = dt * self.coupling_rate(&counts);
        if ratio > STABILITY_LIMIT {
            return Err(Error::StabilityViolation {
                ratio,
                limit: STABILITY_LIMIT,
            });
        }
        let n = ens.len() as f64;
        let nc = counts.len();
        let eps = self.params.epsilon;
        let means: Vec<f64> = (0..nc).map(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { 0.0 }).collect();
        // Coupling on neuron in cell c: rate_c v - target_c.
        let mut rate = vec![0.0; nc];
        let mut target = vec![0.0; nc];
        for c in 0..nc {
            let local = counts[c] as f64 / (n * self.cells.quad_weights[c] * eps);
            rate[c] = local;
            target[c] = local * means[c];
            for d in 0..nc {
                let weight = self.kernel.get(c, d) * counts[d] as f64 / n;
                rate[c] += weight;
                target[c] += weight * means[d];
            }
        }
        let p = &self.params;
        let noise = if self.noise { (2.0 * dt).sqrt() } else { 0.0 };
        par::for_each_indexed(&mut ens.neurons, |_, nrn| {
            let (v, w) = (nrn.v, nrn.w);
            let drift = p.drift_n(v) - w - (rate[nrn.cell] * v - target[nrn.cell]);
            let xi = nrn.normal();
            nrn.v = v + dt * drift + noise * xi;
            nrn.w = w + dt * p.adaptation(v, w);
        });
        ens.t += dt;
        Ok(())
    }

    /// Steps to `t_end` with steps of at most `dt`, reporting moments of
    /// order `q` every `stride` (and at the start and end).
    pub fn run(&self, ens: &mut Ensemble, t_end: f64, dt: f64, stride: f64, q: f64) -> Result<Vec<ParticleSnapshot>> {
        let schedule = crate::kinetic::Schedule::new(ens.t, t_end, dt, stride)?;
        let mut out = vec![ParticleSnapshot {
            t: ens.t,
            cells: empirical_moments(self, ens, q)?,
        }];
        for step in 1..=schedule.steps {
            self.em_step(ens, schedule.dt)?;
            if schedule.is_snapshot(step) {
                ens.t = schedule.time(step);
                out.push(ParticleSnapshot {
                    t: ens.t,
                    cells: empirical_moments(self, ens, q)?,
                });
            }
        }
        Ok(out)
    }
}

/// Plug-in per-cell estimators.
pub fn empirical_moments(system: &ParticleSystem, ens: &Ensemble, q: f64) -> Result<Vec<CellMoments>> {
    let nc = system.cells.len();
    let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); nc];
    for nrn in &ens.neurons {
        buckets[nrn.cell].push((nrn.v, nrn.w));
    }
    buckets
        .iter()
        .enumerate()
        .map(|(c, b)| {
            if b.is_empty() {
                return Err(Error::EmptyCell(c));
            }
            let k = b.len() as f64;
            let mean_v = b.iter().map(|p| p.0).sum::<f64>() / k;
            let mean_w = b.iter().map(|p| p.1).sum::<f64>() / k;
            let d_q = b.iter().map(|p| (p.0 - mean_v).abs().powf(q)).sum::<f64>() / k;
            let m_q = b.iter().map(|p| (p.0 * p.0 + p.1 * p.1).sqrt().powf(q)).sum::<f64>() / k;
            let var = b.iter().map(|p| (p.0 - mean_v).powi(2)).sum::<f64>() / k;
            Ok(CellMoments {
                count: b.len(),
                mean_v,
                mean_w,
                d_q,
                m_q,
                std_v: var.sqrt(),
            })
        })
        .collect()
}
