//! Truncated tensor grid on the `(v, w)` plane with midpoint quadrature.
//!
//! Grid functions are stored w-major: the value at `(v_j, w_k)` lives at
//! index `k * n_v + j`, so each fixed-`w` column of voltages is contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Fewest cells allowed along either axis.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub v_center: f64,
    pub v_half_width: f64,
    pub n_v: usize,
    pub w_center: f64,
    pub w_half_width: f64,
    pub n_w: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            v_center: 0.0,
            v_half_width: 4.0,
            n_v: 192,
            w_center: 0.0,
            w_half_width: 4.0,
            n_w: 192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub n_v: usize,
    pub n_w: usize,
    pub dv: f64,
    pub dw: f64,
    #[serde(skip)]
    pub v_centers: Vec<f64>,
    #[serde(skip)]
    pub w_centers: Vec<f64>,
    pub cell_area: f64,
}

impl PhaseGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        if spec.n_v < MIN_CELLS || spec.n_w < MIN_CELLS {
            return Err(invalid(
                "grid",
                format!("need at least {MIN_CELLS} cells per axis, got {}x{}", spec.n_v, spec.n_w),
            ));
        }
        if !(spec.v_half_width > 0.0 && spec.w_half_width > 0.0) {
            return Err(invalid("grid", "half widths must be positive"));
        }
        let (v_min, v_max) = (spec.v_center - spec.v_half_width, spec.v_center + spec.v_half_width);
        let (w_min, w_max) = (spec.w_center - spec.w_half_width, spec.w_center + spec.w_half_width);
        let dv = (v_max - v_min) / spec.n_v as f64;
        let dw = (w_max - w_min) / spec.n_w as f64;
        Ok(Self {
            v_min,
            v_max,
            w_min,
            w_max,
            n_v: spec.n_v,
            n_w: spec.n_w,
            dv,
            dw,
            v_centers: (0..spec.n_v).map(|j| v_min + (j as f64 + 0.5) * dv).collect(),
            w_centers: (0..spec.n_w).map(|k| w_min + (k as f64 + 0.5) * dw).collect(),
            cell_area: dv * dw,
        })
    }

    pub fn len(&self) -> usize {
        self.n_v * self.n_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        k * self.n_v + j
    }

    /// `(v, w)` at flat index `idx`.
    #[inline]
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        (self.v_centers[idx % self.n_v], self.w_centers[idx / self.n_v])
    }

    /// Evaluate `g` at every cell center.
    pub fn sample(&self, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &w in &self.w_centers {
            for &v in &self.v_centers {
                out.push(g(v, w));
            }
        }
        out
    }

    pub fn is_boundary(&self, j: usize, k: usize) -> bool {
        j == 0 || k == 0 || j + 1 == self.n_v || k + 1 == self.n_w
    }
}

/// Midpoint quadrature `sum f(v_j, w_k) weight(v_j, w_k) dv dw`.
pub fn moment(grid: &PhaseGrid, f: &[f64], weight: impl Fn(f64, f64) -> f64) -> Result<f64> {
    if f.len() != grid.len() {
        return Err(invalid("f", format!("length {} != grid size {}", f.len(), grid.len())));
    }
    if let Some(i) = f.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(format!("f[{i}] = {}", f[i])));
    }
    Ok(moment_unchecked(grid, f, weight))
}

/// Same as [`moment`] without the finiteness scan; for hot loops on trusted data.
pub fn moment_unchecked(grid: &PhaseGrid, f: &[f64], weight: impl Fn(f64, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for (k, col) in f.chunks_exact(grid.n_v).enumerate() {
        let w = grid.w_centers[k];
        let mut acc = 0.0;
        for (j, &x) in col.iter().enumerate() {
            if x != 0.0 {
                acc += x * weight(grid.v_centers[j], w);
            }
        }
        total += acc;
    }
    total * grid.cell_area
}

/// Mass carried by the outermost ring of cells.
pub fn truncation_report(grid: &PhaseGrid, f: &[f64]) -> f64 {
    let mut ring = 0.0;
    for k in 0..grid.n_w {
        for j in 0..grid.n_v {
            if grid.is_boundary(j, k) {
                ring += f[grid.index(j, k)];
            }
        }
    }
    ring * grid.cell_area
}

/// Normalized Gaussian density.
pub fn gaussian(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn rejects_small_grids() {
        assert!(PhaseGrid::new(&GridSpec {
            n_v: 4,
            ..GridSpec::default()
        })
        .is_err());
    }

    #[test]
    fn constant_normalizes_to_one() {
        let g = grid(32);
        let area = (g.v_max - g.v_min) * (g.w_max - g.w_min);
        let f = vec![1.0 / area; g.len()];
        assert_abs_diff_eq!(moment(&g, &f, |_, _| 1.0).unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_mean_and_variance() {
        let g = grid(256);
        let f = g.sample(|v, w| gaussian(v, 0.3, 0.01) * gaussian(w, 0.0, 0.25));
        let mass = moment(&g, &f, |_, _| 1.0).unwrap();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(moment(&g, &f, |v, _| v).unwrap(), 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(
            moment(&g, &f, |v, _| (v - 0.3).powi(2)).unwrap(),
            0.01,
            epsilon = 1e-6
        );
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid(8);
        let mut f = vec![0.0; g.len()];
        f[5] = f64::NAN;
        assert!(matches!(moment(&g, &f, |_, _| 1.0), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn truncation_cases() {
        let g = grid(64);
        assert_eq!(truncation_report(&g, &vec![0.0; g.len()]), 0.0);
        let ones = vec![1.0; g.len()];
        let ring_cells = (2 * 64 + 2 * 62) as f64;
        assert_abs_diff_eq!(truncation_report(&g, &ones), ring_cells * g.cell_area, epsilon = 1e-12);
        // sigma = 0.5 centered: box half width 4 = 8 sigma
        let f = g.sample(|v, w| gaussian(v, 0.0, 0.25) * gaussian(w, 0.0, 0.25));
        assert!(truncation_report(&g, &f) < 1e-12);
    }

    #[test]
    fn linear_weight_quadrature_converges_second_order() {
        // Gaussian wider than the cells: midpoint error on v * f shrinks like dv^2
        // until it hits spectral accuracy; use a narrow box so truncation dominates
        // nothing and a coarse start.
        let errs: Vec<f64> = [8usize, 16, 32]
            .iter()
            .map(|&n| {
                let g = PhaseGrid::new(&GridSpec {
                    v_center: 0.0,
                    v_half_width: 1.0,
                    n_v: n,
                    w_center: 0.0,
                    w_half_width: 1.0,
                    n_w: 8,
                })
                .unwrap();
                // f = (1 + v)^2 on [-1, 1] in v, uniform in w; exact int v f dv = 4/3 * 1
                let f = g.sample(|v, _| (1.0 + v).powi(2) / 2.0);
                (moment(&g, &f, |v, _| v).unwrap() - 4.0 / 3.0).abs()
            })
            .collect();
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        assert!((o1 - 2.0).abs() < 0.1 && (o2 - 2.0).abs() < 0.1, "{errs:?}");
    }
}
