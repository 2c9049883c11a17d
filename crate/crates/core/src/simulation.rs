//! The heteroscedastic mixture benchmark and its Monte Carlo experiment.
//!
//! Data follow `Y = a₀ + a₁X₂ + (s₀ + s₁X₂)ε` with `X₂ ~ U[0, 1]`,
//! `X = (1, X₂)` and `ε` a Gaussian mixture. The conditional mode is
//! linear: `θ = (a₀ + s₀m, a₁ + s₁m)` where `m` is the mode of `ε`.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::asymptotics::{optimal_bandwidth, oracle_quantities, ConditionalDensityModel};
use crate::error::{MlrError, Result};
use crate::estimator::{box_starts, fit_multistart, Dataset, FitConfig};
use crate::kernels::Kernel;
use crate::numerics::{gauss_legendre, DenseMatrix};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    /// `(a₀, a₁)` of the location `a₀ + a₁x₂`.
    pub intercept: [f64; 2],
    /// `(s₀, s₁)` of the scale `s₀ + s₁x₂`.
    pub scale: [f64; 2],
    pub components: Vec<MixtureComponent>,
    /// Residual mode used for the true parameter. `None` locates the mode
    /// numerically with [`find_mode_eps`].
    pub reference_mode: Option<f64>,
}

impl Default for DgpSpec {
    /// `Y = 1 + 3X₂ + (1 + 2X₂)ε`, `ε ~ ½N(−1, 3²) + ½N(1, 0.3²)`, with the
    /// published reference mode 0.9897.
    fn default() -> Self {
        Self {
            intercept: [1.0, 3.0],
            scale: [1.0, 2.0],
            components: vec![
                MixtureComponent { weight: 0.5, mean: -1.0, sd: 3.0 },
                MixtureComponent { weight: 0.5, mean: 1.0, sd: 0.3 },
            ],
            reference_mode: Some(0.9897),
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(MlrError::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        if self.components.iter().any(|c| !(c.sd > 0.0) || c.weight < 0.0) {
            return Err(MlrError::InvalidInput("mixture needs positive sds and non-negative weights".into()));
        }
        Ok(())
    }

    fn location(&self, x2: f64) -> f64 {
        self.intercept[0] + self.intercept[1] * x2
    }

    fn spread(&self, x2: f64) -> f64 {
        self.scale[0] + self.scale[1] * x2
    }

    /// Mode of `ε` used for the true parameter.
    pub fn residual_mode(&self) -> f64 {
        self.reference_mode.unwrap_or_else(|| find_mode_eps(self))
    }

    /// `θ = (a₀ + s₀m, a₁ + s₁m)`.
    pub fn true_parameter(&self) -> [f64; 2] {
        let m = self.residual_mode();
        [self.intercept[0] + self.scale[0] * m, self.intercept[1] + self.scale[1] * m]
    }
}

/// `dᵏf_ε/dεᵏ` of the residual mixture density, `order ≤ 3`.
pub fn eps_density(dgp: &DgpSpec, e: f64, order: usize) -> f64 {
    assert!(order <= 3, "derivatives up to order 3 only");
    dgp.components
        .iter()
        .map(|c| {
            let z = (e - c.mean) / c.sd;
            let phi = INV_SQRT_2PI * (-0.5 * z * z).exp() / c.sd;
            // (−1)ᵏ Heₖ(z) φ(z) / σᵏ⁺¹
            let hermite = match order {
                0 => 1.0,
                1 => -z,
                2 => z * z - 1.0,
                _ => -(z * z * z - 3.0 * z),
            };
            c.weight * phi * hermite / c.sd.powi(order as i32)
        })
        .sum()
}

/// `∂ᵏp(y | x₂)/∂yᵏ` of the conditional density
/// `p(y | x₂) = f_ε((y − μ(x₂))/s(x₂)) / s(x₂)`.
pub fn eps_pdf_derivs(dgp: &DgpSpec, y: f64, x2: f64, order: usize) -> f64 {
    let s = dgp.spread(x2);
    eps_density(dgp, (y - dgp.location(x2)) / s, order) / s.powi(order as i32 + 1)
}

/// Global maximizer of the residual density: a scan with step 1e-3 over
/// `[−10, 10]`, golden-section refinement to 1e-10, then Newton steps on
/// `f'` (density values alone cannot resolve the peak below ~1e-8).
pub fn find_mode_eps(dgp: &DgpSpec) -> f64 {
    let step = 1e-3;
    let f = |e: f64| eps_density(dgp, e, 0);
    let best = (0..=20_000)
        .map(|i| -10.0 + step * i as f64)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("non-empty grid");
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best - step, best + step);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    while hi - lo > 1e-10 {
        if f(c) > f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - inv_phi * (hi - lo);
        d = lo + inv_phi * (hi - lo);
    }
    let mut mode = 0.5 * (lo + hi);
    for _ in 0..3 {
        let curvature = eps_density(dgp, mode, 2);
        if curvature >= 0.0 {
            break;
        }
        let next = mode - eps_density(dgp, mode, 1) / curvature;
        if (next - mode).abs() > step {
            break;
        }
        mode = next;
    }
    mode
}

/// `n` observations drawn from the process with a ChaCha8 stream seeded by
/// `seed`.
pub fn sample(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_components(dgp, n, &mut rng).map(|(d, _)| d)
}

/// Like [`sample`] from a caller-owned generator; also returns the mixture
/// component of each residual.
pub fn sample_with_components<R: Rng + ?Sized>(dgp: &DgpSpec, n: usize, rng: &mut R) -> Result<(Dataset, Vec<usize>)> {
    dgp.validate()?;
    if n < 2 {
        return Err(MlrError::InvalidInput("need at least 2 observations for a 2-parameter model".into()));
    }
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x2: f64 = rng.random();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = dgp.components.len() - 1;
        for (j, c) in dgp.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                label = j;
                break;
            }
        }
        let c = dgp.components[label];
        let z: f64 = rng.sample(StandardNormal);
        let eps = c.mean + c.sd * z;
        x.extend([1.0, x2]);
        y.push(dgp.location(x2) + dgp.spread(x2) * eps);
        labels.push(label);
    }
    Ok((Dataset::new(DenseMatrix::new(n, 2, x)?, y)?, labels))
}

impl ConditionalDensityModel for DgpSpec {
    fn dim(&self) -> usize {
        2
    }

    fn density_derivative(&self, y: f64, x: &[f64], order: usize) -> f64 {
        eps_pdf_derivs(self, y, x[1], order)
    }

    fn true_parameter(&self) -> Vec<f64> {
        DgpSpec::true_parameter(self).to_vec()
    }

    /// 64-point Gauss–Legendre over `x₂ ∈ [0, 1]`.
    fn input_quadrature(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        let (nodes, weights) = gauss_legendre(64);
        Some(
            nodes
                .iter()
                .zip(&weights)
                .map(|(t, w)| (vec![1.0, 0.5 * (t + 1.0)], 0.5 * w))
                .collect(),
        )
    }

    fn sample_input(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![1.0, rng.random::<f64>()]
    }
}

/// Seed for an independent stream identified by `parts` under `base`
/// (splitmix64 finalizer chained over the parts).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

/// Seed of the dataset for `(n, trial)`; shared by every kernel.
pub fn dataset_seed(base: u64, n: usize, trial: usize) -> u64 {
    derive_seed(base, &[0, n as u64, trial as u64])
}

/// Seed of the start points for `(kernel, n, trial)`.
pub fn starts_seed(base: u64, kernel: Kernel, n: usize, trial: usize) -> u64 {
    let index = Kernel::ALL.iter().position(|k| *k == kernel).expect("kernel listed") as u64;
    derive_seed(base, &[1 + index, n as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub kernels: Vec<Kernel>,
    pub base_seed: u64,
    pub starts_per_fit: usize,
    pub start_box_halfwidth: f64,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
    /// Measure wall-clock fit time.
    pub timing: bool,
    pub dgp: DgpSpec,
}

impl ExperimentConfig {
    pub fn new(sample_sizes: Vec<usize>, trials: usize, kernels: Vec<Kernel>, base_seed: u64) -> Self {
        Self {
            sample_sizes,
            trials,
            kernels,
            base_seed,
            starts_per_fit: 10,
            start_box_halfwidth: 0.1,
            jobs: 0,
            timing: false,
            dgp: DgpSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(MlrError::InvalidInput("trials must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|n| *n < 2) {
            return Err(MlrError::InvalidInput("sample sizes must be at least 2".into()));
        }
        if self.kernels.is_empty() {
            return Err(MlrError::InvalidInput("no kernels given".into()));
        }
        if self.starts_per_fit == 0 || !(self.start_box_halfwidth >= 0.0) {
            return Err(MlrError::InvalidInput("need at least one start and a non-negative box".into()));
        }
        if let Some(k) = self.kernels.iter().find(|k| !k.is_qm()) {
            return Err(MlrError::NotQuadraticallyMinorizable(k.name()));
        }
        self.dgp.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub kernel: Kernel,
    pub n: usize,
    pub bandwidth: f64,
    /// `100 × mean ‖θ̂ − θ‖²` over successful trials.
    pub mse_x100: f64,
    /// `100 ×` standard error of that mean; `None` with fewer than two trials.
    pub mse_std_x100: Option<f64>,
    /// Mean wall-clock seconds per single-start fit, when timing is on.
    pub mean_fit_seconds: Option<f64>,
    pub failed: usize,
}

struct TrialOutcome {
    squared_error: Option<f64>,
    seconds: f64,
}

fn run_trial(config: &ExperimentConfig, truth: [f64; 2], kernel: Kernel, h: f64, n: usize, trial: usize) -> TrialOutcome {
    let failed = TrialOutcome { squared_error: None, seconds: 0.0 };
    let Ok(data) = sample(&config.dgp, n, dataset_seed(config.base_seed, n, trial)) else {
        return failed;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(starts_seed(config.base_seed, kernel, n, trial));
    let starts = box_starts(&truth, config.starts_per_fit, config.start_box_halfwidth, &mut rng);
    let fit_config = FitConfig::new(kernel, h).with_starts(starts);
    let clock = config.timing.then(Instant::now);
    let result = fit_multistart(&data, &fit_config);
    let seconds = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
    match result {
        Ok(r) => TrialOutcome {
            squared_error: Some(r.theta.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum()),
            seconds,
        },
        Err(_) => failed,
    }
}

/// Runs every `(kernel, n)` cell. Results are identical for any `jobs`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let truth = config.dgp.true_parameter();
    let oracle = oracle_quantities(&config.dgp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| MlrError::InvalidInput(format!("cannot start worker threads: {e}")))?;

    let mut rows = Vec::new();
    for &kernel in &config.kernels {
        for &n in &config.sample_sizes {
            let h = optimal_bandwidth(kernel, n, &oracle)?;
            let outcomes: Vec<TrialOutcome> = pool.install(|| {
                (0..config.trials)
                    .into_par_iter()
                    .map(|t| run_trial(config, truth, kernel, h, n, t))
                    .collect()
            });
            let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.squared_error).collect();
            let failed = config.trials - errors.len();
            if failed * 100 > config.trials || errors.is_empty() {
                return Err(MlrError::ExperimentFailed {
                    kernel: kernel.name(),
                    n,
                    failed,
                    trials: config.trials,
                });
            }
            let m = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / m;
            let std_err = (errors.len() > 1).then(|| {
                let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            });
            let mean_fit_seconds = config.timing.then(|| {
                outcomes.iter().map(|o| o.seconds).sum::<f64>() / (m * config.starts_per_fit as f64)
            });
            rows.push(ExperimentRow {
                kernel,
                n,
                bandwidth: h,
                mse_x100: 100.0 * mean,
                mse_std_x100: std_err.map(|s| 100.0 * s),
                mean_fit_seconds,
                failed,
            });
        }
    }
    Ok(rows)
}
