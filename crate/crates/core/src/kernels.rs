//! Symmetric kernels, their best quadratic minorizers, and the constants
//! that drive bandwidth selection.
//!
//! A symmetric kernel can be written through its *profile*,
//! `K(u) = k̄(u²)`. When `k̄` is convex and non-increasing the scaled kernel
//! `K_h(u) = K(u/h)/h` admits, at every point `u'`, the quadratic minorizer
//!
//! ```text
//! G_h(u | u') = g_h(u')·u² + K_h(u') − g_h(u')·u'²,   g_h(u') = ǩ((u'/h)²)/h³
//! ```
//!
//! where `ǩ` is the smallest subderivative of `k̄`. The coefficient `g_h` is
//! the IRLS weight (up to sign).
//!
//! | kernel       | U            | V          | QM           |
//! |--------------|--------------|------------|--------------|
//! | biweight     | 1/7          | 15/7       | yes          |
//! | triweight    | 1/9          | 35/11      | yes          |
//! | tricube      | 35/243       | 420/187    | no           |
//! | cosine       | 1 − 8/π²     | π⁴/64      | yes          |
//! | epanechnikov | 1/5          | 3/2        | yes          |
//! | triangle     | 1/6          | 2          | except u'=0  |
//! | gaussian     | 1            | 1/(4√π)    | yes          |
//! | logistic     | π²/3         | 1/30       | yes          |
//! | laplace      | 2            | 1/4        | except u'=0  |
//! | sech         | 1            | π/12       | yes          |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{MlrError, Result};
use crate::numerics::{integrate_1d, QuadratureSpec};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Relative floor applied to `|u'|/h` for kernels whose minorizer is
/// undefined at zero.
pub const ZERO_RESIDUAL_CLAMP: f64 = 1e-10;

/// Whether the best quadratic minorizer exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QmStatus {
    /// Minorizable at every point.
    Everywhere,
    /// Minorizable everywhere except `u' = 0`, where the profile slope is −∞.
    ExceptZero,
    /// Profile is not convex.
    NotQm,
}

impl QmStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QmStatus::Everywhere => "qm_everywhere",
            QmStatus::ExceptZero => "qm_except_zero",
            QmStatus::NotQm => "not_qm",
        }
    }
}

impl fmt::Display for QmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Curvature coefficient `g_h(u') ≤ 0` of the best quadratic minorizer.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QmWeight(f64);

impl QmWeight {
    pub fn value(self) -> f64 {
        self.0
    }

    /// `|g|`, the weight handed to a non-negative least-squares solve.
    pub fn magnitude(self) -> f64 {
        -self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Biweight,
    Triweight,
    Tricube,
    Cosine,
    Epanechnikov,
    Triangle,
    Gaussian,
    Logistic,
    Laplace,
    Sech,
}

impl Kernel {
    /// All kernels in table order.
    pub const ALL: [Kernel; 10] = [
        Kernel::Biweight,
        Kernel::Triweight,
        Kernel::Tricube,
        Kernel::Cosine,
        Kernel::Epanechnikov,
        Kernel::Triangle,
        Kernel::Gaussian,
        Kernel::Logistic,
        Kernel::Laplace,
        Kernel::Sech,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Biweight => "biweight",
            Kernel::Triweight => "triweight",
            Kernel::Tricube => "tricube",
            Kernel::Cosine => "cosine",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Triangle => "triangle",
            Kernel::Gaussian => "gaussian",
            Kernel::Logistic => "logistic",
            Kernel::Laplace => "laplace",
            Kernel::Sech => "sech",
        }
    }

    pub fn qm_status(self) -> QmStatus {
        match self {
            Kernel::Tricube => QmStatus::NotQm,
            Kernel::Triangle | Kernel::Laplace => QmStatus::ExceptZero,
            _ => QmStatus::Everywhere,
        }
    }

    pub fn is_qm(self) -> bool {
        self.qm_status() != QmStatus::NotQm
    }

    /// Smallest `T` with `K(u) = 0` for `|u| > T`; infinite for the
    /// untruncated kernels.
    pub fn support_bound(self) -> f64 {
        match self {
            Kernel::Gaussian | Kernel::Logistic | Kernel::Laplace | Kernel::Sech => f64::INFINITY,
            _ => 1.0,
        }
    }

    /// Half-width of the window used when integrating the kernel; the
    /// neglected tail mass of `K`, `u²K` and `(K')²` is below 1e-12.
    pub fn truncation_radius(self) -> f64 {
        match self {
            Kernel::Gaussian => 10.0,
            Kernel::Logistic | Kernel::Laplace => 60.0,
            Kernel::Sech => 40.0,
            _ => 1.0,
        }
    }

    /// Unscaled density `K(u)`.
    pub fn density(self, u: f64) -> f64 {
        let a = u.abs();
        let inside = a <= 1.0;
        match self {
            Kernel::Biweight if inside => 15.0 / 16.0 * (1.0 - u * u).powi(2),
            Kernel::Triweight if inside => 35.0 / 32.0 * (1.0 - u * u).powi(3),
            Kernel::Tricube if inside => 70.0 / 81.0 * (1.0 - a * a * a).powi(3),
            Kernel::Cosine if inside => PI / 4.0 * (PI * u / 2.0).cos(),
            Kernel::Epanechnikov if inside => 0.75 * (1.0 - u * u),
            Kernel::Triangle if inside => 1.0 - a,
            Kernel::Biweight
            | Kernel::Triweight
            | Kernel::Tricube
            | Kernel::Cosine
            | Kernel::Epanechnikov
            | Kernel::Triangle => 0.0,
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            Kernel::Logistic => {
                let e = (-a).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Kernel::Laplace => 0.5 * (-a).exp(),
            Kernel::Sech => 0.5 / (PI * u / 2.0).cosh(),
        }
    }

    /// Analytic derivative `K'(u)`, taken as zero at the finitely many kinks.
    pub fn derivative(self, u: f64) -> f64 {
        let a = u.abs();
        let inside = a < 1.0;
        match self {
            Kernel::Biweight if inside => -3.75 * u * (1.0 - u * u),
            Kernel::Triweight if inside => -105.0 / 16.0 * u * (1.0 - u * u).powi(2),
            Kernel::Tricube if inside => -70.0 / 9.0 * u * a * (1.0 - a * a * a).powi(2),
            Kernel::Cosine if inside => -PI * PI / 8.0 * (PI * u / 2.0).sin(),
            Kernel::Epanechnikov if inside => -1.5 * u,
            Kernel::Triangle if inside => -sign(u),
            Kernel::Biweight
            | Kernel::Triweight
            | Kernel::Tricube
            | Kernel::Cosine
            | Kernel::Epanechnikov
            | Kernel::Triangle => 0.0,
            Kernel::Gaussian => -u * self.density(u),
            Kernel::Logistic => -self.density(u) * (u / 2.0).tanh(),
            Kernel::Laplace => -sign(u) * self.density(u),
            Kernel::Sech => -PI / 2.0 * self.density(u) * (PI * u / 2.0).tanh(),
        }
    }

    /// Profile `k̄(s)` with `K(u) = k̄(u²)`, for `s ≥ 0`.
    pub fn profile(self, s: f64) -> f64 {
        self.density(s.sqrt())
    }

    /// Smallest subderivative of the profile at `s ≥ 0`. At a kink this is
    /// the left derivative; at `s = 0` it is `-∞` for the kernels that are
    /// only QM away from zero.
    pub fn profile_slope(self, s: f64) -> f64 {
        let u = s.sqrt();
        let inside = s <= 1.0;
        match self {
            Kernel::Epanechnikov if inside => -0.75,
            Kernel::Biweight if inside => -15.0 / 8.0 * (1.0 - s),
            Kernel::Triweight if inside => -105.0 / 32.0 * (1.0 - s).powi(2),
            Kernel::Tricube if inside => -35.0 / 9.0 * u * (1.0 - s * u).powi(2),
            Kernel::Cosine if inside => {
                let x = PI * u / 2.0;
                let sinc = if x < 1e-8 { 1.0 } else { x.sin() / x };
                -PI.powi(3) / 32.0 * sinc
            }
            Kernel::Triangle if inside => -0.5 / u,
            Kernel::Biweight
            | Kernel::Triweight
            | Kernel::Tricube
            | Kernel::Cosine
            | Kernel::Epanechnikov
            | Kernel::Triangle => 0.0,
            Kernel::Gaussian => -0.5 * self.density(u),
            Kernel::Logistic => {
                let t = if u < 1e-4 { 0.5 - u * u / 24.0 } else { (u / 2.0).tanh() / u };
                -0.5 * self.density(u) * t
            }
            Kernel::Laplace => -0.5 * self.density(u) / u,
            Kernel::Sech => {
                let x = PI * u / 2.0;
                let t = if x < 1e-4 { PI / 2.0 * (1.0 - x * x / 3.0) } else { x.tanh() / u };
                -PI / 4.0 * self.density(u) * t
            }
        }
    }

    /// Scaled kernel `K_h(u) = K(u/h)/h`.
    pub fn eval(self, u: f64, h: f64) -> f64 {
        self.density(u / h) / h
    }

    /// Best-quadratic-minorizer coefficient `g_h(u')`.
    ///
    /// For kernels that are QM only away from zero, `|u'|` is first floored
    /// at `ZERO_RESIDUAL_CLAMP·h`.
    pub fn qm_weight(self, u_prime: f64, h: f64) -> Result<QmWeight> {
        let z = match self.qm_status() {
            QmStatus::NotQm => return Err(MlrError::NotQuadraticallyMinorizable(self.name())),
            QmStatus::ExceptZero => (u_prime / h).abs().max(ZERO_RESIDUAL_CLAMP),
            QmStatus::Everywhere => u_prime / h,
        };
        Ok(QmWeight(self.profile_slope(z * z) / (h * h * h)))
    }

    /// Closed-form `(U, V) = (∫u²K, ∫(K')²)`.
    pub fn constants(self) -> (f64, f64) {
        match self {
            Kernel::Biweight => (1.0 / 7.0, 15.0 / 7.0),
            Kernel::Triweight => (1.0 / 9.0, 35.0 / 11.0),
            Kernel::Tricube => (35.0 / 243.0, 420.0 / 187.0),
            Kernel::Cosine => (1.0 - 8.0 / (PI * PI), PI.powi(4) / 64.0),
            Kernel::Epanechnikov => (0.2, 1.5),
            Kernel::Triangle => (1.0 / 6.0, 2.0),
            Kernel::Gaussian => (1.0, 0.25 / PI.sqrt()),
            Kernel::Logistic => (PI * PI / 3.0, 1.0 / 30.0),
            Kernel::Laplace => (2.0, 0.25),
            Kernel::Sech => (1.0, PI / 12.0),
        }
    }

    /// `(U, V)` by quadrature over `[-T, T]`, split at the origin.
    pub fn constants_numeric(self) -> Result<(f64, f64)> {
        let u = self.integrate_symmetric(|u| u * u * self.density(u))?;
        let v = self.integrate_symmetric(|u| self.derivative(u).powi(2))?;
        Ok((u, v))
    }

    /// `∫K` by quadrature.
    pub fn mass_numeric(self) -> Result<f64> {
        self.integrate_symmetric(|u| self.density(u))
    }

    fn integrate_symmetric<F: Fn(f64) -> f64>(self, f: F) -> Result<f64> {
        let t = self.truncation_radius();
        let spec = QuadratureSpec::new(-t, 0.0).with_tolerances(1e-12, 1e-15);
        let left = integrate_1d(&f, &spec)?;
        let right = integrate_1d(&f, &QuadratureSpec { lower: 0.0, upper: t, ..spec })?;
        Ok(left + right)
    }

    /// Kernel-dependent factor `U^(6/7)·V^(4/7)` of the optimal AMSE.
    pub fn amse_criterion(self) -> f64 {
        let (u, v) = self.constants();
        u.powf(6.0 / 7.0) * v.powf(4.0 / 7.0)
    }
}

fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = MlrError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| MlrError::InvalidInput(format!("unknown kernel `{s}`")))
    }
}
