//! Model coefficients: the voltage drift `N`, the adaptation field `A`, the
//! spatial density `rho0`, and the long-range connectivity kernel `Psi`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Polynomial voltage drift `N(v) = sum_k coeffs[k] v^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    coeffs: Vec<f64>,
}

impl Drift {
    /// The historical FitzHugh-Nagumo choice `N(v) = v - v^3`.
    pub fn cubic() -> Self {
        Self {
            coeffs: vec![0.0, 1.0, 0.0, -1.0],
        }
    }

    /// Linear drift `N(v) = -slope * v`, used for closed-form oracles.
    pub fn linear(slope: f64) -> Self {
        Self {
            coeffs: vec![0.0, -slope],
        }
    }

    /// Arbitrary polynomial, ascending coefficients. Trailing zeros are trimmed.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("drift", "coefficients must be finite and non-empty"));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    /// Odd degree with a negative leading coefficient: `N` pushes large `|v|`
    /// back toward the origin.
    pub fn is_confining(&self) -> bool {
        self.degree() % 2 == 1 && self.leading() < 0.0
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * v + c)
    }

    pub fn derivative(&self, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * v + k as f64 * c)
    }

    pub fn second_derivative(&self, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * v + (k * (k - 1)) as f64 * c)
    }

    /// Primitive `n(v) = int_0^v N(s) ds`, normalized so that `n(0) = 0`.
    pub fn primitive(&self, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * v + c / (k as f64 + 1.0))
            * v
    }

    /// Constant and linear coefficients `(N(0), N'(0))`.
    pub fn affine_part(&self) -> (f64, f64) {
        (self.coeffs[0], self.coeffs.get(1).copied().unwrap_or(0.0))
    }

    /// Tangent line of `N` at `v0` as `(intercept, slope)`; the affine part
    /// itself when `N` is affine.
    pub fn tangent_at(&self, v0: f64) -> (f64, f64) {
        if self.coeffs.len() <= 2 {
            return self.affine_part();
        }
        let slope = self.derivative(v0);
        (self.eval(v0) - slope * v0, slope)
    }

    /// `N(v)` minus its affine part.
    pub fn nonlinear_part(&self, v: f64) -> f64 {
        if self.coeffs.len() <= 2 {
            return 0.0;
        }
        let (c0, c1) = self.affine_part();
        self.eval(v) - c0 - c1 * v
    }
}

/// Every scalar coefficient of the model together with the drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Growth exponent of the drift; equals the polynomial degree.
    pub p: usize,
    /// Growth exponent of `N'` and `N''`, used to pick moment orders.
    pub p_prime: usize,
    pub m_star: f64,
    pub drift: Drift,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, c: f64, epsilon: f64, m_star: f64, drift: Drift) -> Result<Self> {
        let p = drift.degree();
        let p_prime = p.saturating_sub(1);
        Self {
            a,
            b,
            c,
            epsilon,
            p,
            p_prime,
            m_star,
            drift,
        }
        .validated()
    }

    /// Default cubic model used throughout the rate studies.
    pub fn fitzhugh_nagumo(epsilon: f64) -> Result<Self> {
        Self::new(0.5, 1.0, 0.0, epsilon, 0.5, Drift::cubic())
    }

    pub fn with_p_prime(mut self, p_prime: usize) -> Self {
        self.p_prime = p_prime;
        self
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self {
            epsilon,
            ..self.clone()
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c)] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.b > 0.0) {
            return Err(invalid("b", format!("must be > 0, got {}", self.b)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.m_star > 0.0 && self.m_star <= 1.0) {
            return Err(invalid("m_star", format!("must lie in (0, 1], got {}", self.m_star)));
        }
        if !self.drift.is_confining() {
            return Err(invalid(
                "drift",
                "leading term must have odd degree and a negative coefficient",
            ));
        }
        Ok(self)
    }

    pub fn drift_n(&self, v: f64) -> f64 {
        self.drift.eval(v)
    }

    pub fn primitive_n(&self, v: f64) -> f64 {
        self.drift.primitive(v)
    }

    /// `A(v, w) = a v - b w + c`.
    pub fn adaptation(&self, v: f64, w: f64) -> f64 {
        adaptation(self.a, self.b, self.c, v, w)
    }

    /// Highest moment order controlled uniformly in epsilon: `2 (p + p')`.
    pub fn max_moment_order(&self) -> usize {
        2 * (self.p + self.p_prime)
    }
}

pub fn adaptation(a: f64, b: f64, c: f64, v: f64, w: f64) -> f64 {
    a * v - b * w + c
}

/// Scalar values sampled on the cell centers of the spatial domain `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialField {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub quad_weights: Vec<f64>,
}

impl SpatialField {
    /// Midpoint grid of `n` cells on `[0, 1]`, filled by `profile`.
    pub fn on_unit_interval(n: usize, profile: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("nodes", "need at least one spatial node"));
        }
        let h = 1.0 / n as f64;
        let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let values = nodes.iter().map(|&x| profile(x)).collect();
        Ok(Self {
            nodes,
            values,
            quad_weights: vec![h; n],
        })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::on_unit_interval(n, |_| value)
    }

    /// Same nodes and weights, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.nodes.len());
        Self {
            nodes: self.nodes.clone(),
            values,
            quad_weights: self.quad_weights.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.quad_weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    pub fn cell_width(&self) -> f64 {
        self.quad_weights.first().copied().unwrap_or(1.0)
    }
}

/// Density profile of neurons over `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityProfile {
    Uniform,
    /// `1 + amplitude cos(2 pi x)` clipped to `[m_star, 1/m_star]` then
    /// rescaled to unit mass.
    Bump { amplitude: f64 },
}

impl DensityProfile {
    pub fn build(&self, n: usize, m_star: f64) -> Result<SpatialField> {
        let field = match *self {
            DensityProfile::Uniform => SpatialField::constant(n, 1.0)?,
            DensityProfile::Bump { amplitude } => {
                let raw = SpatialField::on_unit_interval(n, |x| {
                    (1.0 + amplitude * (2.0 * std::f64::consts::PI * x).cos())
                        .clamp(m_star, 1.0 / m_star)
                })?;
                let mass = raw.integral();
                let values = raw.values.iter().map(|v| v / mass).collect();
                raw.with_values(values)
            }
        };
        check_density(&field, m_star)?;
        Ok(field)
    }
}

/// Checks `m_star <= rho0 <= 1/m_star` and unit total mass.
pub fn check_density(rho0: &SpatialField, m_star: f64) -> Result<()> {
    if let Some((i, v)) = rho0
        .values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= m_star && v <= 1.0 / m_star))
    {
        return Err(invalid(
            "rho0",
            format!("value {v} at node {i} outside [{m_star}, {}]", 1.0 / m_star),
        ));
    }
    let mass = rho0.integral();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(invalid("rho0", format!("total mass {mass} differs from 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Zero,
    /// `exp(-kappa |x - x'|)`
    Exponential { kappa: f64 },
    /// `|x - x'|^(-beta)`, capped on the diagonal at half a cell.
    PowerLaw { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    #[serde(flatten)]
    pub kind: KernelKind,
    #[serde(default = "one")]
    pub strength: f64,
}

fn one() -> f64 {
    1.0
}

impl Kernel {
    pub fn zero() -> Self {
        Self {
            kind: KernelKind::Zero,
            strength: 0.0,
        }
    }

    pub fn exponential(kappa: f64, strength: f64) -> Self {
        Self {
            kind: KernelKind::Exponential { kappa },
            strength,
        }
    }

    pub fn power_law(beta: f64, strength: f64) -> Self {
        Self {
            kind: KernelKind::PowerLaw { beta },
            strength,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, KernelKind::Zero) || self.strength == 0.0
    }

    fn eval(&self, dist: f64, half_cell: f64) -> f64 {
        let raw = match self.kind {
            KernelKind::Zero => return 0.0,
            KernelKind::Exponential { kappa } => (-kappa * dist).exp(),
            KernelKind::PowerLaw { beta } => dist.max(half_cell).powf(-beta),
        };
        self.strength * raw
    }
}

/// Dense sampled kernel `Psi(x_i, x_j)` on the nodes of a spatial field.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
    weights: Vec<f64>,
}

/// Spatial dimension of `K`; only the unit interval is supported.
const DIM: f64 = 1.0;

pub fn kernel_matrix(kernel: &Kernel, field: &SpatialField) -> Result<KernelMatrix> {
    let n = field.len();
    if let KernelKind::PowerLaw { beta } = kernel.kind {
        if beta >= DIM {
            return Err(Error::NonIntegrableKernel(format!(
                "power-law exponent {beta} must be below the dimension {DIM}"
            )));
        }
    }
    if let KernelKind::Exponential { kappa } = kernel.kind {
        if !kappa.is_finite() {
            return Err(invalid("kappa", "must be finite"));
        }
    }
    for w in field.nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(invalid("nodes", "spatial nodes must be strictly increasing"));
        }
    }
    let half_cell = 0.5 * field.cell_width();
    let mut entries = Vec::with_capacity(n * n);
    for &xi in &field.nodes {
        for &xj in &field.nodes {
            entries.push(kernel.eval((xi - xj).abs(), half_cell));
        }
    }
    let km = KernelMatrix {
        n,
        entries,
        weights: field.quad_weights.clone(),
    };
    if km.row_norms().iter().chain(km.col_norms().iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonIntegrableKernel("sampled norms are not finite".into()));
    }
    Ok(km)
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0.0)
    }

    /// Right convolution `(Psi *_r g)(x_i) = sum_j Psi(x_i, x_j) g(x_j) dx_j`.
    pub fn convolve(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.entries[i * self.n..(i + 1) * self.n];
                row.iter()
                    .zip(g)
                    .zip(&self.weights)
                    .map(|((p, g), w)| p * g * w)
                    .sum()
            })
            .collect()
    }

    /// `sup_j sum_i |Psi(x_i, x_j)| dx_i`
    pub fn col_norms(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j).abs() * self.weights[i]).sum())
            .collect()
    }

    /// `sum_j |Psi(x_i, x_j)| dx_j` per row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).abs() * self.weights[j]).sum())
            .collect()
    }
}

/// Outcome of one standing-assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Checks the standing hypotheses on the drift, kernel and spatial density.
/// Construction already rejects hard violations; this reports softer ones
/// (growth exponent, kernel norms) as well.
pub fn assumption_report(
    params: &ModelParams,
    kernel: &Kernel,
    rho0: &SpatialField,
) -> Vec<AssumptionCheck> {
    let mut out = Vec::new();
    let d = &params.drift;
    out.push(AssumptionCheck {
        name: "drift confinement",
        passed: d.is_confining() && d.degree() >= 2,
        detail: format!(
            "degree p = {}, leading coefficient {} (need odd p >= 2, negative leading term)",
            d.degree(),
            d.leading()
        ),
    });
    let deriv_growth = d.degree().saturating_sub(1);
    out.push(AssumptionCheck {
        name: "drift derivative growth",
        passed: params.p_prime >= deriv_growth,
        detail: format!(
            "|N'| + |N''| grows like |v|^{deriv_growth}; configured p' = {}",
            params.p_prime
        ),
    });
    match kernel_matrix(kernel, rho0) {
        Ok(km) => {
            let row = km.row_norms().into_iter().fold(0.0, f64::max);
            let col = km.col_norms().into_iter().fold(0.0, f64::max);
            out.push(AssumptionCheck {
                name: "kernel integrability",
                passed: row.is_finite() && col.is_finite(),
                detail: format!("max row norm {row:.6}, max column norm {col:.6}"),
            });
        }
        Err(e) => out.push(AssumptionCheck {
            name: "kernel integrability",
            passed: false,
            detail: e.to_string(),
        }),
    }
    let mass = rho0.integral();
    out.push(AssumptionCheck {
        name: "initial mass normalization",
        passed: (mass - 1.0).abs() <= 1e-10 && rho0.values.iter().all(|&v| v >= 0.0),
        detail: format!("integral of rho0 = {mass:.15}"),
    });
    let lo = rho0.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rho0.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.push(AssumptionCheck {
        name: "density bounds",
        passed: lo >= params.m_star && hi <= 1.0 / params.m_star,
        detail: format!(
            "rho0 in [{lo:.6}, {hi:.6}], required [{}, {}]",
            params.m_star,
            1.0 / params.m_star
        ),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubic_drift_values() {
        let d = Drift::cubic();
        assert_eq!(d.eval(0.0), 0.0);
        assert_eq!(d.eval(1.0), 0.0);
        assert_eq!(d.eval(2.0), -6.0);
        assert_eq!(d.derivative(2.0), -11.0);
        assert_eq!(d.second_derivative(2.0), -12.0);
    }

    #[test]
    fn primitive_values() {
        let d = Drift::cubic();
        assert_eq!(d.primitive(0.0), 0.0);
        assert_abs_diff_eq!(d.primitive(1.0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d.primitive(-1.0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(Drift::linear(1.0).primitive(3.0), -4.5, epsilon = 1e-15);
    }

    #[test]
    fn primitive_differentiates_back_second_order() {
        let d = Drift::cubic();
        for &v in &[-1.7, -0.3, 0.4, 1.9] {
            let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
                .iter()
                .map(|&h| ((d.primitive(v + h) - d.primitive(v - h)) / (2.0 * h) - d.eval(v)).abs())
                .collect();
            // Quartic primitive: error is exactly h^2 |n'''(v)| / 6 = h^2 |v|.
            for (e, h) in errs.iter().zip([1e-2, 5e-3, 2.5e-3]) {
                assert_abs_diff_eq!(*e, h * h * v.abs(), epsilon = 1e-10);
            }
            let order = (errs[0] / errs[2]).ln() / 4f64.ln();
            assert!((order - 2.0).abs() < 0.05, "order {order}");
        }
    }

    #[test]
    fn adaptation_values() {
        assert_eq!(adaptation(1.0, 1.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(adaptation(0.0, 2.0, 1.0, 5.0, 0.0), 1.0);
        assert_eq!(adaptation(1.0, 1.0, 0.0, 0.0, -1.0), 1.0);
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(ModelParams::new(0.0, 0.0, 0.0, 0.1, 0.5, Drift::cubic()).is_err());
        assert!(ModelParams::new(0.0, 1.0, 0.0, -0.1, 0.5, Drift::cubic()).is_err());
        assert!(ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.0, Drift::cubic()).is_err());
        let even = Drift::polynomial(vec![0.0, 0.0, -1.0]).unwrap();
        assert!(ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, even).is_err());
        let anti = Drift::polynomial(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, anti).is_err());
    }

    #[test]
    fn zero_kernel_matrix() {
        let f = SpatialField::constant(4, 1.0).unwrap();
        let km = kernel_matrix(&Kernel::zero(), &f).unwrap();
        assert!(km.is_zero());
    }

    #[test]
    fn single_node_exponential() {
        let f = SpatialField::constant(1, 1.0).unwrap();
        let km = kernel_matrix(&Kernel::exponential(3.0, 2.5), &f).unwrap();
        assert_eq!(km.get(0, 0), 2.5);
    }

    #[test]
    fn three_node_exponential_matches_formula() {
        let f = SpatialField::constant(3, 1.0).unwrap();
        let km = kernel_matrix(&Kernel::exponential(1.0, 1.0), &f).unwrap();
        // nodes 1/6, 1/2, 5/6: distances 0, 1/3, 2/3
        let e1 = (-1.0f64 / 3.0).exp();
        let e2 = (-2.0f64 / 3.0).exp();
        let expected = [[1.0, e1, e2], [e1, 1.0, e1], [e2, e1, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(km.get(i, j), expected[i][j], epsilon = 1e-15);
            }
        }
        // 0.716531310573789 and 0.513417119032592 from an independent evaluation
        assert_abs_diff_eq!(e1, 0.716_531_310_573_789_2, epsilon = 1e-15);
        assert_abs_diff_eq!(e2, 0.513_417_119_032_592, epsilon = 1e-15);
    }

    #[test]
    fn power_law_requires_integrability() {
        let f = SpatialField::constant(8, 1.0).unwrap();
        assert!(matches!(
            kernel_matrix(&Kernel::power_law(1.0, 1.0), &f),
            Err(Error::NonIntegrableKernel(_))
        ));
        let km = kernel_matrix(&Kernel::power_law(0.5, 1.0), &f).unwrap();
        assert_abs_diff_eq!(km.get(3, 3), (1.0f64 / 16.0).powf(-0.5), epsilon = 1e-12);
    }

    #[test]
    fn bump_density_respects_bounds() {
        let rho = DensityProfile::Bump { amplitude: 0.3 }.build(8, 0.5).unwrap();
        assert_abs_diff_eq!(rho.integral(), 1.0, epsilon = 1e-12);
        assert!(rho.values.iter().any(|&v| (v - 1.0).abs() > 0.1));
    }

    #[test]
    fn assumption_report_flags_linear_growth() {
        let params = ModelParams::new(0.0, 1.0, 0.0, 0.1, 0.5, Drift::linear(1.0)).unwrap();
        let rho = SpatialField::constant(4, 1.0).unwrap();
        let report = assumption_report(&params, &Kernel::zero(), &rho);
        assert!(!report[0].passed);
        assert!(report[1..].iter().all(|c| c.passed));
        let cubic = ModelParams::fitzhugh_nagumo(0.1).unwrap();
        let report = assumption_report(&cubic, &Kernel::exponential(2.0, 1.0), &rho);
        assert!(report.iter().all(|c| c.passed), "{report:?}");
    }
}
