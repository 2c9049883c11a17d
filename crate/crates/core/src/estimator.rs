//! Modal linear regression by IRLS.
//!
//! The estimator maximizes `O(θ) = (1/n) Σ K_h(yᵢ − θᵀxᵢ)`. Each IRLS step
//! maximizes the quadratic minorizer of `O` built from the per-residual
//! minorizer weights, which is a weighted least-squares solve with weights
//! `|g_h(rᵢ)|`. The objective sequence is therefore non-decreasing for every
//! QM kernel. With the Epanechnikov kernel the weights take two values, so
//! the step depends on `θ` only through the active index set and the
//! iteration stops exactly once that set repeats.

use rand::Rng;

use crate::error::{MlrError, Result};
use crate::kernels::Kernel;
use crate::numerics::{solve_weighted_normal_equations, weighted_gram_trace, Cholesky, DenseMatrix};

/// Observations `(xᵢ, yᵢ)`; by convention the first input column is the
/// intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if p == 0 || n < p {
            return Err(MlrError::InvalidInput(format!("need n >= p >= 1, got n = {n}, p = {p}")));
        }
        if y.len() != n {
            return Err(MlrError::InvalidInput(format!("{n} input rows but {} outputs", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MlrError::InvalidInput("outputs must be finite".into()));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn residual(&self, i: usize, theta: &[f64]) -> f64 {
        self.y[i] - dot(self.x.row(i), theta)
    }

    pub fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.residual(i, theta)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(1/n) Σ K_h(yᵢ − θᵀxᵢ)`.
pub fn objective(data: &Dataset, theta: &[f64], kernel: Kernel, h: f64) -> f64 {
    let total: f64 = (0..data.n()).map(|i| kernel.eval(data.residual(i, theta), h)).sum();
    total / data.n() as f64
}

/// Estimator controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub kernel: Kernel,
    pub bandwidth: f64,
    /// Stop once `‖θₜ₊₁ − θₜ‖₂ ≤ tol` (not used for Epanechnikov).
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the weighted Gram matrix. With zero, a singular solve
    /// is retried once with `1e-10·trace(XᵀWX)/p`.
    pub ridge: f64,
    pub starts: Vec<Vec<f64>>,
}

impl FitConfig {
    pub fn new(kernel: Kernel, bandwidth: f64) -> Self {
        Self {
            kernel,
            bandwidth,
            tol: 1e-4,
            max_iter: 500,
            ridge: 0.0,
            starts: Vec::new(),
        }
    }

    pub fn with_starts(mut self, starts: Vec<Vec<f64>>) -> Self {
        self.starts = starts;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(MlrError::InvalidInput(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if !(self.tol > 0.0) {
            return Err(MlrError::InvalidInput("tol must be positive".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(MlrError::InvalidInput("ridge must be non-negative".into()));
        }
        if !self.kernel.is_qm() {
            return Err(MlrError::NotQuadraticallyMinorizable(self.kernel.name()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTolerance,
    IndexSetFixedPoint,
    MaxIterations,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::StepTolerance => "step_tolerance",
            Termination::IndexSetFixedPoint => "index_set_fixed_point",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    /// `O(θ₀), O(θ₁), …, O(θ_final)`.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Which start produced this result (0 for a single-start fit).
    pub start_index: usize,
    pub failed_starts: usize,
    /// Epanechnikov only: whether `−Σ_{I} xᵢxᵢᵀ` over the final active set
    /// is negative definite. A diagnostic, not a guarantee.
    pub hessian_negative_definite: Option<bool>,
}

/// Observations whose residual lies in the non-flat part of a compactly
/// supported kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveIndexSet(Vec<usize>);

impl ActiveIndexSet {
    /// `{i : |yᵢ − θᵀxᵢ| ≤ h}`.
    pub fn at(data: &Dataset, theta: &[f64], h: f64) -> Self {
        Self((0..data.n()).filter(|&i| data.residual(i, theta).abs() <= h).collect())
    }

    fn from_weights(w: &[f64]) -> Self {
        Self(w.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `|g_h(rᵢ)|` for every observation.
pub fn minorizer_weights(data: &Dataset, theta: &[f64], kernel: Kernel, h: f64) -> Result<Vec<f64>> {
    (0..data.n())
        .map(|i| Ok(kernel.qm_weight(data.residual(i, theta), h)?.magnitude()))
        .collect()
}

fn weighted_solve(data: &Dataset, w: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if ridge == 0.0 && w.iter().all(|v| *v == 0.0) {
        return Err(MlrError::EmptySupport);
    }
    match solve_weighted_normal_equations(data.x(), data.y(), w, ridge) {
        Err(MlrError::SingularSystem { .. }) if ridge == 0.0 => {
            let fallback = 1e-10 * weighted_gram_trace(data.x(), w) / data.p() as f64;
            solve_weighted_normal_equations(data.x(), data.y(), w, fallback)
        }
        other => other,
    }
}

/// One IRLS update `θₜ₊₁ = (Σ gᵢ xᵢxᵢᵀ)⁻¹ Σ gᵢ yᵢxᵢ`.
pub fn irls_step(data: &Dataset, theta_t: &[f64], config: &FitConfig) -> Result<Vec<f64>> {
    let w = minorizer_weights(data, theta_t, config.kernel, config.bandwidth)?;
    weighted_solve(data, &w, config.ridge)
}

/// Gaussian modal-EM update with responsibilities `∝ K_h(yᵢ − θₜᵀxᵢ)`.
pub fn mem_step_gaussian(data: &Dataset, theta_t: &[f64], h: f64) -> Result<Vec<f64>> {
    let k: Vec<f64> = (0..data.n()).map(|i| Kernel::Gaussian.eval(data.residual(i, theta_t), h)).collect();
    let total: f64 = k.iter().sum();
    if total == 0.0 {
        return Err(MlrError::EmptySupport);
    }
    let p: Vec<f64> = k.iter().map(|v| v / total).collect();
    weighted_solve(data, &p, 0.0)
}

/// Runs IRLS from `start`.
pub fn fit(data: &Dataset, config: &FitConfig, start: &[f64]) -> Result<FitResult> {
    config.validate()?;
    if start.len() != data.p() {
        return Err(MlrError::InvalidInput(format!(
            "start has {} coordinates, model has {}",
            start.len(),
            data.p()
        )));
    }
    let (kernel, h) = (config.kernel, config.bandwidth);
    let index_sets = kernel == Kernel::Epanechnikov;

    let mut theta = start.to_vec();
    let mut trajectory = vec![objective(data, &theta, kernel, h)];
    let mut previous: Option<ActiveIndexSet> = None;

    let finish = |theta: Vec<f64>, trajectory: Vec<f64>, iterations, termination| {
        let hessian_negative_definite = index_sets.then(|| active_gram_is_definite(data, &theta, h));
        FitResult {
            objective: *trajectory.last().expect("trajectory starts non-empty"),
            theta,
            trajectory,
            iterations,
            termination,
            start_index: 0,
            failed_starts: 0,
            hessian_negative_definite,
        }
    };

    for iter in 0..config.max_iter {
        let w = minorizer_weights(data, &theta, kernel, h)?;
        if index_sets {
            let active = ActiveIndexSet::from_weights(&w);
            if previous.as_ref() == Some(&active) {
                return Ok(finish(theta, trajectory, iter, Termination::IndexSetFixedPoint));
            }
            previous = Some(active);
        }
        let next = weighted_solve(data, &w, config.ridge)?;
        let step = distance(&next, &theta);
        theta = next;
        trajectory.push(objective(data, &theta, kernel, h));
        if !index_sets && step <= config.tol {
            return Ok(finish(theta, trajectory, iter + 1, Termination::StepTolerance));
        }
    }
    Ok(finish(theta, trajectory, config.max_iter, Termination::MaxIterations))
}

fn active_gram_is_definite(data: &Dataset, theta: &[f64], h: f64) -> bool {
    let p = data.p();
    let mut gram = DenseMatrix::zeros(p, p);
    for i in ActiveIndexSet::at(data, theta, h).indices() {
        let xi = data.x().row(*i);
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] += xi[a] * xi[b];
            }
        }
    }
    Cholesky::factor(&gram).is_ok()
}

/// Runs [`fit`] from every configured start and keeps the highest final
/// objective. Ties within 1e-12 go to the earliest start; failed starts are
/// counted, not propagated.
pub fn fit_multistart(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    if config.starts.is_empty() {
        return Err(MlrError::InvalidInput("no starting points".into()));
    }
    config.validate()?;
    let mut best: Option<FitResult> = None;
    let mut failed = 0;
    for (index, start) in config.starts.iter().enumerate() {
        match fit(data, config, start) {
            Ok(mut result) => {
                result.start_index = index;
                if best.as_ref().is_none_or(|b| result.objective > b.objective + 1e-12) {
                    best = Some(result);
                }
            }
            Err(MlrError::InvalidInput(msg)) => return Err(MlrError::InvalidInput(msg)),
            Err(_) => failed += 1,
        }
    }
    let mut best = best.ok_or(MlrError::AllStartsFailed(config.starts.len()))?;
    best.failed_starts = failed;
    Ok(best)
}

/// Ordinary least squares.
pub fn ols(data: &Dataset) -> Result<Vec<f64>> {
    weighted_solve(data, &vec![1.0; data.n()], 0.0)
}

/// The OLS solution followed by `count` points drawn uniformly from the box
/// of half-width `half_width` around it.
pub fn default_starts<R: Rng + ?Sized>(
    data: &Dataset,
    count: usize,
    half_width: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let center = ols(data)?;
    let mut starts = vec![center.clone()];
    starts.extend(box_starts(&center, count, half_width, rng));
    Ok(starts)
}

/// `count` points uniform in `[c − half_width, c + half_width]^p`.
pub fn box_starts<R: Rng + ?Sized>(center: &[f64], count: usize, half_width: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| center.iter().map(|c| c + rng.random_range(-half_width..=half_width)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64]) -> Dataset {
        Dataset::new(DenseMatrix::new(y.len(), 1, vec![1.0; y.len()]).unwrap(), y.to_vec()).unwrap()
    }

    fn line_data(n: usize, theta: [f64; 2]) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, i as f64 / n as f64]).collect();
        let y = rows.iter().map(|r| theta[0] + theta[1] * r[1]).collect();
        Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), y).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let x = DenseMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(Dataset::new(x, vec![1.0]).is_err());
        let x = DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(Dataset::new(x.clone(), vec![1.0]).is_err());
        assert!(Dataset::new(x, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn objective_examples() {
        let d = intercept_only(&[0.0]);
        assert_eq!(objective(&d, &[0.0], Kernel::Epanechnikov, 1.0), 0.75);
        let d = intercept_only(&[0.0, 2.0]);
        assert_eq!(objective(&d, &[0.0], Kernel::Epanechnikov, 1.0), 0.375);
        let d = intercept_only(&[1.0]);
        let expected = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((objective(&d, &[0.0], Kernel::Gaussian, 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn irls_step_examples() {
        let d = intercept_only(&[0.0, 0.1, 10.0]);
        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0);
        let th = irls_step(&d, &[0.0], &cfg).unwrap();
        assert!((th[0] - 0.05).abs() < 1e-15);

        let d = intercept_only(&[0.0, 1.0]);
        let cfg = FitConfig::new(Kernel::Gaussian, 1.0);
        let th = irls_step(&d, &[0.0], &cfg).unwrap();
        let e = (-0.5f64).exp();
        assert!((th[0] - e / (1.0 + e)).abs() < 1e-15);
        let mem = mem_step_gaussian(&d, &[0.0], 1.0).unwrap();
        assert!((mem[0] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn exact_fit_is_stationary() {
        let d = line_data(8, [0.5, -2.0]);
        for k in Kernel::ALL.into_iter().filter(|k| k.is_qm()) {
            let cfg = FitConfig::new(k, 0.7);
            let th = irls_step(&d, &[0.5, -2.0], &cfg).unwrap();
            assert!((th[0] - 0.5).abs() < 1e-12 && (th[1] + 2.0).abs() < 1e-12, "{k}: {th:?}");
        }
    }

    #[test]
    fn empty_support_and_ridge() {
        let d = intercept_only(&[10.0, 11.0]);
        let mut cfg = FitConfig::new(Kernel::Epanechnikov, 1.0);
        assert_eq!(irls_step(&d, &[0.0], &cfg), Err(MlrError::EmptySupport));
        cfg.ridge = 1.0;
        assert_eq!(irls_step(&d, &[0.0], &cfg).unwrap(), vec![0.0]);
    }

    #[test]
    fn singular_gram_falls_back_to_ridge() {
        // one active point, two parameters
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let d = Dataset::new(x, vec![0.0, 50.0, 100.0]).unwrap();
        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0);
        let th = irls_step(&d, &[0.0, 0.0], &cfg).unwrap();
        assert!(th.iter().all(|v| v.is_finite()));
        assert!(d.residual(0, &th).abs() < 1e-6);
    }

    #[test]
    fn tricube_rejected() {
        let d = intercept_only(&[0.0, 1.0]);
        let cfg = FitConfig::new(Kernel::Tricube, 1.0);
        assert_eq!(fit(&d, &cfg, &[0.0]), Err(MlrError::NotQuadraticallyMinorizable("tricube")));
    }

    #[test]
    fn epanechnikov_three_point_fixed_point() {
        let d = intercept_only(&[0.0, 0.1, 10.0]);
        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0);
        let r = fit(&d, &cfg, &[0.0]).unwrap();
        assert_eq!(r.termination, Termination::IndexSetFixedPoint);
        assert!(r.iterations <= 3);
        assert!((r.theta[0] - 0.05).abs() < 1e-15);
        assert_eq!(irls_step(&d, &r.theta, &cfg).unwrap(), r.theta);
        assert_eq!(r.hessian_negative_definite, Some(true));
        assert_eq!(ActiveIndexSet::at(&d, &r.theta, 1.0).indices(), &[0, 1]);
    }

    #[test]
    fn exact_linear_data_converges_immediately() {
        let d = line_data(10, [1.0, 3.0]);
        for k in Kernel::ALL.into_iter().filter(|k| k.is_qm()) {
            let r = fit(&d, &FitConfig::new(k, 0.5), &[1.0, 3.0]).unwrap();
            assert!(r.iterations <= 1, "{k}: {}", r.iterations);
            assert!((r.theta[0] - 1.0).abs() < 1e-10 && (r.theta[1] - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mem_tends_to_ols_for_huge_bandwidth() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.5]]).unwrap();
        let d = Dataset::new(x, vec![0.3, 2.1, 3.7, 7.9]).unwrap();
        let mem = mem_step_gaussian(&d, &[0.0, 0.0], 1e6).unwrap();
        let o = ols(&d).unwrap();
        for (a, b) in mem.iter().zip(&o) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mem_single_point_interpolates() {
        let d = intercept_only(&[4.2]);
        assert!((mem_step_gaussian(&d, &[0.0], 1.0).unwrap()[0] - 4.2).abs() < 1e-15);
    }

    #[test]
    fn multistart_examples() {
        let d = intercept_only(&[0.0, 0.1, 10.0]);
        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0).with_starts(vec![vec![0.0]]);
        let single = fit(&d, &cfg, &[0.0]).unwrap();
        assert_eq!(fit_multistart(&d, &cfg).unwrap(), single);

        // both starts reach the same point: first wins
        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0).with_starts(vec![vec![0.02], vec![0.0]]);
        let r = fit_multistart(&d, &cfg).unwrap();
        assert_eq!(r.start_index, 0);

        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0).with_starts(vec![vec![100.0], vec![0.0]]);
        let r = fit_multistart(&d, &cfg).unwrap();
        assert_eq!((r.start_index, r.failed_starts), (1, 1));

        let cfg = FitConfig::new(Kernel::Epanechnikov, 1.0).with_starts(vec![vec![100.0]]);
        assert_eq!(fit_multistart(&d, &cfg), Err(MlrError::AllStartsFailed(1)));
    }

    #[test]
    fn multistart_picks_higher_peak() {
        // two clusters along y ≈ 2x (7 points) and y ≈ -x + 5 (4 points)
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let jitter = [0.05, -0.03, 0.02, -0.06, 0.04, -0.01, 0.03];
        for (i, j) in jitter.iter().enumerate() {
            let x = i as f64 * 0.5;
            rows.push(vec![1.0, x]);
            y.push(2.0 * x + j);
        }
        for (i, j) in jitter[..4].iter().enumerate() {
            let x = 0.25 + i as f64 * 0.8;
            rows.push(vec![1.0, x]);
            y.push(-x + 5.0 + j);
        }
        let d = Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), y).unwrap();
        let h = 0.3;
        let k = Kernel::Biweight;

        // dense grid search for the global maximizer
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for a in 0..=400 {
            for b in 0..=400 {
                let th = [-1.0 + 7.0 * a as f64 / 400.0, -2.0 + 5.0 * b as f64 / 400.0];
                let o = objective(&d, &th, k, h);
                if o > best.0 {
                    best = (o, th);
                }
            }
        }
        let cfg = FitConfig::new(k, h).with_tol(1e-10).with_starts(vec![vec![4.8, -0.9], vec![0.1, 1.9]]);
        let r = fit_multistart(&d, &cfg).unwrap();
        assert_eq!(r.start_index, 1);
        assert!((r.theta[0] - best.1[0]).abs() < 0.05 && (r.theta[1] - best.1[1]).abs() < 0.05);
        assert!(r.objective >= best.0 - 1e-9);
    }

    #[test]
    fn default_starts_centered_at_ols() {
        let d = line_data(6, [1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = default_starts(&d, 10, 0.1, &mut rng).unwrap();
        assert_eq!(s.len(), 11);
        for st in &s[1..] {
            assert!((st[0] - s[0][0]).abs() <= 0.1 && (st[1] - s[0][1]).abs() <= 0.1);
        }
    }

    mod properties {
        use super::*;
        use crate::kernels::{QmStatus, ZERO_RESIDUAL_CLAMP};
        use proptest::prelude::*;

        const QM: [Kernel; 9] = [
            Kernel::Biweight,
            Kernel::Triweight,
            Kernel::Cosine,
            Kernel::Epanechnikov,
            Kernel::Triangle,
            Kernel::Gaussian,
            Kernel::Logistic,
            Kernel::Laplace,
            Kernel::Sech,
        ];

        fn dataset(p: usize, cells: &[(f64, f64, f64, f64)]) -> Dataset {
            let rows: Vec<Vec<f64>> = cells.iter().map(|c| [1.0, c.0, c.1][..p].to_vec()).collect();
            let y = cells.iter().map(|c| c.2 + 2.0 * c.0 * c.3).collect();
            Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), y).unwrap()
        }

        // Quadratic surrogate built at `anchor`, evaluated at θ, less the ridge
        // penalty that the weighted solve adds. Residuals below the clamp are
        // anchored at the clamp.
        fn surrogate(d: &Dataset, anchor: &[f64], theta: &[f64], kernel: Kernel, h: f64, ridge: f64) -> f64 {
            let floor = ZERO_RESIDUAL_CLAMP * h;
            let total: f64 = (0..d.n())
                .map(|i| {
                    let mut c = d.residual(i, anchor);
                    if kernel.qm_status() == QmStatus::ExceptZero && c.abs() < floor {
                        c = floor;
                    }
                    let g = kernel.qm_weight(c, h).unwrap().value();
                    let u = d.residual(i, theta);
                    kernel.eval(c, h) + 0.5 * g * (u * u - c * c)
                })
                .sum();
            let penalty = 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>();
            (total - penalty) / d.n() as f64
        }

        fn clamped(d: &Dataset, theta: &[f64], kernel: Kernel, h: f64) -> bool {
            kernel.qm_status() == QmStatus::ExceptZero
                && d.residuals(theta).iter().any(|u| u.abs() < ZERO_RESIDUAL_CLAMP * h)
        }

        fn cells() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
            prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -3.0..3.0f64, -1.0..1.0f64), 6..30)
        }

        // Gauss-Jordan with partial pivoting on the normal equations of the rows in `subset`.
        fn brute_ols(d: &Dataset, subset: &[usize]) -> Option<Vec<f64>> {
            let p = d.p();
            let mut m = vec![vec![0.0; p + 1]; p];
            for &i in subset {
                let x = d.x().row(i);
                for a in 0..p {
                    for b in 0..p {
                        m[a][b] += x[a] * x[b];
                    }
                    m[a][p] += x[a] * d.y()[i];
                }
            }
            for c in 0..p {
                let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
                if m[piv][c].abs() < 1e-6 {
                    return None;
                }
                m.swap(c, piv);
                for r in 0..p {
                    if r != c {
                        let f = m[r][c] / m[c][c];
                        for k in c..=p {
                            m[r][k] -= f * m[c][k];
                        }
                    }
                }
            }
            Some((0..p).map(|c| m[c][p] / m[c][c]).collect())
        }

        proptest! {
            #[test]
            fn trajectory_never_decreases(
                cells in cells(),
                p in 1usize..=3,
                k in 0usize..9,
                h in 0.2..3.0f64,
                start in prop::collection::vec(-2.0..2.0f64, 3),
            ) {
                let d = dataset(p, &cells);
                let r = fit(&d, &FitConfig::new(QM[k], h), &start[..p]);
                prop_assume!(r.is_ok());
                let r = r.unwrap();
                // A singular weighted Gram matrix sends the step through the ridge
                // fallback, which ascends the penalized surrogate instead of O.
                let cfg = FitConfig::new(QM[k], h);
                let mut theta = start[..p].to_vec();
                for w in r.trajectory.windows(2) {
                    let weights = minorizer_weights(&d, &theta, QM[k], h).unwrap();
                    let next = irls_step(&d, &theta, &cfg).unwrap();
                    match solve_weighted_normal_equations(d.x(), d.y(), &weights, 0.0) {
                        Err(MlrError::SingularSystem { .. }) => {
                            let ridge = 1e-10 * weighted_gram_trace(d.x(), &weights) / p as f64;
                            let before = surrogate(&d, &theta, &theta, QM[k], h, ridge);
                            let after = surrogate(&d, &theta, &next, QM[k], h, ridge);
                            prop_assert!(after >= before - 1e-12, "{}: penalized {} -> {}", QM[k], before, after);
                        }
                        _ if clamped(&d, &theta, QM[k], h) => {
                            // The surrogate is not tangent here; check O(θₜ₊₁) ≥ S(θₜ₊₁) ≥ S(θₜ).
                            let before = surrogate(&d, &theta, &theta, QM[k], h, 0.0);
                            let after = surrogate(&d, &theta, &next, QM[k], h, 0.0);
                            prop_assert!(after >= before - 1e-12, "{}: surrogate {} -> {}", QM[k], before, after);
                            prop_assert!(w[1] >= after - 1e-12, "{}: {} below surrogate {}", QM[k], w[1], after);
                        }
                        _ => prop_assert!(w[1] >= w[0] - 1e-12, "{}: {:?}", QM[k], r.trajectory),
                    }
                    theta = next;
                }
                prop_assert_eq!(&theta, &r.theta);
                // Near a degenerate maximum the contraction rate approaches one; running
                // out of iterations is then acceptable only while still ascending.
                if r.termination == Termination::MaxIterations {
                    let tail = &r.trajectory[r.trajectory.len() - 10..];
                    prop_assert!(tail.windows(2).all(|w| w[1] > w[0]), "{}: stalled at {:?}", QM[k], tail);
                }
            }

            #[test]
            fn gaussian_irls_is_mem(cells in cells(), p in 1usize..=3, h in 0.3..3.0f64,
                                    theta in prop::collection::vec(-1.0..1.0f64, 3)) {
                let d = dataset(p, &cells);
                let cfg = FitConfig::new(Kernel::Gaussian, h);
                let a = irls_step(&d, &theta[..p], &cfg);
                let b = mem_step_gaussian(&d, &theta[..p], h);
                prop_assume!(a.is_ok() && b.is_ok());
                for (u, v) in a.unwrap().iter().zip(&b.unwrap()) {
                    prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
                }
            }

            #[test]
            fn epanechnikov_step_is_active_set_ols(cells in cells(), p in 1usize..=3, h in 0.5..3.0f64,
                                                   theta in prop::collection::vec(-1.0..1.0f64, 3)) {
                let d = dataset(p, &cells);
                let active = ActiveIndexSet::at(&d, &theta[..p], h);
                let oracle = brute_ols(&d, active.indices());
                prop_assume!(oracle.is_some());
                let step = irls_step(&d, &theta[..p], &FitConfig::new(Kernel::Epanechnikov, h)).unwrap();
                for (u, v) in step.iter().zip(&oracle.unwrap()) {
                    prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
                }
            }

            #[test]
            fn epanechnikov_terminates_on_a_fixed_point(cells in cells(), p in 1usize..=3, h in 0.3..3.0f64,
                                                        start in prop::collection::vec(-2.0..2.0f64, 3)) {
                let d = dataset(p, &cells);
                let cfg = FitConfig::new(Kernel::Epanechnikov, h);
                let r = fit(&d, &cfg, &start[..p]);
                prop_assume!(r.is_ok());
                let r = r.unwrap();
                prop_assert_eq!(r.termination, Termination::IndexSetFixedPoint);
                prop_assert_eq!(irls_step(&d, &r.theta, &cfg).unwrap(), r.theta);
            }

            #[test]
            fn smooth_kernel_fits_are_stationary(cells in cells(), p in 1usize..=3, k in 0usize..4, h in 0.5..3.0f64) {
                let kernel = [Kernel::Gaussian, Kernel::Biweight, Kernel::Logistic, Kernel::Sech][k];
                let d = dataset(p, &cells);
                let start = ols(&d);
                prop_assume!(start.is_ok());
                let r = fit(&d, &FitConfig::new(kernel, h).with_tol(1e-10), &start.unwrap());
                prop_assume!(r.as_ref().is_ok_and(|r| r.termination == Termination::StepTolerance));
                let r = r.unwrap();
                let step = 1e-6;
                let mut norm = 0.0;
                for j in 0..p {
                    let (mut up, mut down) = (r.theta.clone(), r.theta.clone());
                    up[j] += step;
                    down[j] -= step;
                    let g = (objective(&d, &up, kernel, h) - objective(&d, &down, kernel, h)) / (2.0 * step);
                    norm += g * g;
                }
                prop_assert!(norm.sqrt() <= 1e-3 * (1.0 + r.objective.abs()), "{kernel}: {}", norm.sqrt());
            }
        }
    }
}
