//! Population quantities of the estimator's asymptotic expansion and the
//! AMSE-optimal bandwidth.
//!
//! With `m(x) = θᵀx` the true conditional mode and `p⁽ʲ⁾` the `j`-th
//! derivative in `y` of the conditional density, evaluated at `y = m(x)`:
//!
//! ```text
//! A = E[p⁽²⁾ XXᵀ],  b = E[p⁽³⁾ X],  C = E[p XXᵀ]
//! AMSE(h) = h⁴U²‖A⁻¹b‖²/4 + V·tr(A⁻¹CA⁻¹)/(nh³)
//! ```

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MlrError, Result};
use crate::kernels::Kernel;
use crate::numerics::{Cholesky, DenseMatrix};

/// Monte Carlo sample count used when the input law has no quadrature rule.
pub const MONTE_CARLO_SAMPLES: usize = 1_000_000;

/// A conditional density `p(y | x)` with a linear conditional mode.
pub trait ConditionalDensityModel: Sync {
    /// Dimension `p` of the input vector.
    fn dim(&self) -> usize;

    /// `∂ᵏp(y | x)/∂yᵏ` for `order ∈ 0..=3`.
    fn density_derivative(&self, y: f64, x: &[f64], order: usize) -> f64;

    /// Parameter `θ` of the conditional mode `θᵀx`.
    fn true_parameter(&self) -> Vec<f64>;

    /// Nodes and weights of a quadrature rule for expectations over `X`,
    /// when the input law admits one.
    fn input_quadrature(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        None
    }

    /// One draw of `X`.
    fn sample_input(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleQuantities {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub c: DenseMatrix,
}

impl OracleQuantities {
    fn negated_a(&self) -> Result<Cholesky> {
        Cholesky::factor(&self.a.scaled(-1.0))
    }

    /// `A⁻¹b`, the direction of the leading bias term.
    pub fn bias_direction(&self) -> Result<Vec<f64>> {
        let minus_a = self.negated_a()?;
        Ok(minus_a.solve(&self.b).into_iter().map(|v| -v).collect())
    }

    /// `tr(A⁻¹CA⁻¹)`, by two solves against the columns of `C`.
    pub fn variance_trace(&self) -> Result<f64> {
        let minus_a = self.negated_a()?;
        let left = minus_a.solve_matrix(&self.c);
        Ok(minus_a.solve_matrix(&left.transpose()).trace())
    }

    fn check(self) -> Result<Self> {
        if self.negated_a().is_err() {
            return Err(MlrError::NotNegativeDefinite);
        }
        Ok(self)
    }
}

struct Accumulator {
    a: DenseMatrix,
    b: Vec<f64>,
    c: DenseMatrix,
}

impl Accumulator {
    fn new(p: usize) -> Self {
        Self {
            a: DenseMatrix::zeros(p, p),
            b: vec![0.0; p],
            c: DenseMatrix::zeros(p, p),
        }
    }

    fn add<M: ConditionalDensityModel + ?Sized>(&mut self, model: &M, theta: &[f64], x: &[f64], weight: f64) {
        let mode: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum();
        let d0 = model.density_derivative(mode, x, 0) * weight;
        let d2 = model.density_derivative(mode, x, 2) * weight;
        let d3 = model.density_derivative(mode, x, 3) * weight;
        for i in 0..x.len() {
            self.b[i] += d3 * x[i];
            for j in 0..x.len() {
                self.a[(i, j)] += d2 * x[i] * x[j];
                self.c[(i, j)] += d0 * x[i] * x[j];
            }
        }
    }

    fn finish(self) -> OracleQuantities {
        OracleQuantities { a: self.a, b: self.b, c: self.c }
    }
}

/// `A`, `b`, `C` at the model's true parameter. Uses the model's quadrature
/// rule when it has one, otherwise [`MONTE_CARLO_SAMPLES`] draws with seed 0.
pub fn oracle_quantities<M: ConditionalDensityModel + ?Sized>(model: &M) -> Result<OracleQuantities> {
    oracle_quantities_at(model, &model.true_parameter())
}

/// As [`oracle_quantities`] but with the densities evaluated at `θᵀx` for a
/// supplied `θ`, e.g. a pilot estimate.
pub fn oracle_quantities_at<M: ConditionalDensityModel + ?Sized>(model: &M, theta: &[f64]) -> Result<OracleQuantities> {
    if theta.len() != model.dim() {
        return Err(MlrError::InvalidInput(format!(
            "parameter has {} coordinates, model has {}",
            theta.len(),
            model.dim()
        )));
    }
    match model.input_quadrature() {
        Some(rule) => {
            let mut acc = Accumulator::new(model.dim());
            for (x, w) in &rule {
                acc.add(model, theta, x, *w);
            }
            acc.finish().check()
        }
        None => monte_carlo(model, theta, MONTE_CARLO_SAMPLES, 0),
    }
}

/// Monte Carlo estimate of `A`, `b`, `C` at the true parameter.
pub fn oracle_quantities_monte_carlo<M: ConditionalDensityModel + ?Sized>(
    model: &M,
    samples: usize,
    seed: u64,
) -> Result<OracleQuantities> {
    monte_carlo(model, &model.true_parameter(), samples, seed)
}

fn monte_carlo<M: ConditionalDensityModel + ?Sized>(
    model: &M,
    theta: &[f64],
    samples: usize,
    seed: u64,
) -> Result<OracleQuantities> {
    if samples == 0 {
        return Err(MlrError::InvalidInput("need at least one Monte Carlo sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Accumulator::new(model.dim());
    let w = 1.0 / samples as f64;
    for _ in 0..samples {
        let x = model.sample_input(&mut rng);
        acc.add(model, theta, &x, w);
    }
    acc.finish().check()
}

fn check_size(h: f64, n: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(MlrError::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    if n == 0 {
        return Err(MlrError::InvalidInput("n must be at least 1".into()));
    }
    Ok(())
}

/// Squared asymptotic bias plus asymptotic variance at bandwidth `h`.
pub fn amse(kernel: Kernel, h: f64, n: usize, oracle: &OracleQuantities) -> Result<f64> {
    check_size(h, n)?;
    let (u, v) = kernel.constants();
    let bias = squared_norm(&oracle.bias_direction()?);
    let trace = oracle.variance_trace()?;
    Ok(h.powi(4) * u * u * bias / 4.0 + v * trace / (n as f64 * h.powi(3)))
}

/// The bandwidth minimizing [`amse`]:
/// `[3V·tr(A⁻¹CA⁻¹) / (nU²‖A⁻¹b‖²)]^(1/7)`.
pub fn optimal_bandwidth(kernel: Kernel, n: usize, oracle: &OracleQuantities) -> Result<f64> {
    check_size(1.0, n)?;
    let (u, v) = kernel.constants();
    let bias = squared_norm(&oracle.bias_direction()?);
    if bias.sqrt() <= 1e-12 {
        return Err(MlrError::ZeroBias);
    }
    let trace = oracle.variance_trace()?;
    Ok((3.0 * v * trace / (n as f64 * u * u * bias)).powf(1.0 / 7.0))
}

/// `U^(6/7)V^(4/7)·n^(−4/7)·‖A⁻¹b‖^(6/7)·tr(A⁻¹CA⁻¹)^(4/7)`, to which the
/// AMSE at the optimal bandwidth is proportional with a kernel-free factor.
pub fn optimal_amse_scale(kernel: Kernel, n: usize, oracle: &OracleQuantities) -> Result<f64> {
    check_size(1.0, n)?;
    let bias = squared_norm(&oracle.bias_direction()?).sqrt();
    let trace = oracle.variance_trace()?;
    Ok(kernel.amse_criterion() * (n as f64).powf(-4.0 / 7.0) * bias.powf(6.0 / 7.0) * trace.powf(4.0 / 7.0))
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
