//! χ² distribution functions backing the input-norm chance constraint.
//!
//! For zero-mean Gaussian `u` with covariance `Y`, `‖u‖₂ ≤ √(q λ_max(Y))` holds
//! with probability at least `p` when `q` is the `p`-quantile of χ² with `m`
//! degrees of freedom. Requiring that bound to stay below `u_max` yields the
//! eigenvalue cap `λ_max(Y) ≤ ρ = u_max² / q(1 − γ)`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("probability must lie in (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("degrees of freedom must be at least 1")]
    ZeroDegreesOfFreedom,
    #[error("invalid chance constraint parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareQuantileQuery {
    pub dof: u32,
    pub p: f64,
}

impl ChiSquareQuantileQuery {
    pub fn new(dof: u32, p: f64) -> Result<Self, StatsError> {
        if dof == 0 {
            return Err(StatsError::ZeroDegreesOfFreedom);
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(StatsError::ProbabilityOutOfRange(p));
        }
        Ok(Self { dof, p })
    }

    pub fn evaluate(&self) -> f64 {
        quantile_unchecked(self.dof, self.p)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        lower_gamma_series(a, x)
    } else {
        1.0 - upper_gamma_continued_fraction(a, x)
    }
}

fn log_prefactor(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a)
}

fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() + log_prefactor(a, x)).exp().min(1.0)
}

/// `Q(a, x)` by the modified Lentz continued fraction.
fn upper_gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (log_prefactor(a, x) + h.ln()).exp().clamp(0.0, 1.0)
}

/// χ² CDF with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> Result<f64, StatsError> {
    if dof == 0 {
        return Err(StatsError::ZeroDegreesOfFreedom);
    }
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::NegativeArgument(x));
    }
    Ok(regularized_lower_gamma(0.5 * dof as f64, 0.5 * x))
}

/// `p`-quantile of χ² with `dof` degrees of freedom.
pub fn chi2_quantile(dof: u32, p: f64) -> Result<f64, StatsError> {
    Ok(ChiSquareQuantileQuery::new(dof, p)?.evaluate())
}

/// Wilson–Hilferty cube approximation of the χ² quantile.
fn wilson_hilferty(dof: f64, p: f64) -> f64 {
    let z = standard_normal_quantile_approx(p);
    let h = 2.0 / (9.0 * dof);
    (dof * (1.0 - h + z * h.sqrt()).powi(3)).max(0.0)
}

/// Coarse normal quantile used only to seed the bracket.
fn standard_normal_quantile_approx(p: f64) -> f64 {
    // Abramowitz & Stegun 26.2.23, |error| < 4.5e-4.
    let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let t = (-2.0 * q.ln()).sqrt();
    let num = 2.515_517 + 0.802_853 * t + 0.010_328 * t * t;
    let den = 1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t;
    sign * (t - num / den)
}

fn quantile_unchecked(dof: u32, p: f64) -> f64 {
    let cdf = |x: f64| regularized_lower_gamma(0.5 * dof as f64, 0.5 * x);
    let guess = wilson_hilferty(dof as f64, p).max(1e-8);

    let (mut lo, mut hi) = (guess, guess);
    while cdf(lo) > p {
        lo *= 0.5;
        if lo < 1e-300 {
            lo = 0.0;
            break;
        }
    }
    while cdf(hi) < p {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvalue cap `ρ = u_max² / Q_{χ²_m}(1 − γ)` for an `m`-dimensional input.
pub fn chance_bound_rho(u_max: f64, gamma: f64, input_dim: u32) -> Result<f64, StatsError> {
    if !(u_max > 0.0 && u_max.is_finite()) {
        return Err(StatsError::InvalidParameter(format!("u_max = {u_max}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(StatsError::ProbabilityOutOfRange(gamma));
    }
    Ok(u_max * u_max / chi2_quantile(input_dim, 1.0 - gamma)?)
}
