//! Driving Lévy processes and subordinators: cumulants, triplets, Esscher
//! transform and exact increment sampling.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::quad;
use crate::rng;
use crate::specfun;

/// A Lévy process L, described by the law of L_1.
///
/// The cumulant is φ(x) = log E[e^{x L_1}].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LevyModel {
    /// d t + sqrt(b) B_t.
    Brownian { drift: f64, variance: f64 },
    Nig { alpha: f64, beta: f64, mu: f64, delta: f64 },
    CompoundPoissonNormal { rate: f64, jump_mean: f64, jump_sd: f64 },
    /// Gamma(a t, rate c) marginals.
    GammaSubordinator { a: f64, c: f64 },
    /// Inverse Gaussian subordinator with φ(x) = δ(γ - sqrt(γ² - 2x)).
    IgSubordinator { delta: f64, gamma: f64 },
}

/// Market prices of risk for the driver (θ) and the volatility subordinator (η).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EsscherParams {
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub eta: f64,
}

impl LevyModel {
    pub fn standard_brownian() -> Self {
        LevyModel::Brownian { drift: 0.0, variance: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LssError::InvalidParams(m));
        match *self {
            LevyModel::Brownian { drift, variance } if !(variance >= 0.0 && drift.is_finite()) => {
                bad(format!("brownian variance must be >= 0, got {variance}"))
            }
            LevyModel::Nig { alpha, beta, delta, mu }
                if !(delta > 0.0 && beta.abs() < alpha && mu.is_finite()) =>
            {
                bad(format!("nig needs delta > 0 and |beta| < alpha, got alpha={alpha}, beta={beta}, delta={delta}"))
            }
            LevyModel::CompoundPoissonNormal { rate, jump_sd, jump_mean }
                if !(rate >= 0.0 && jump_sd >= 0.0 && jump_mean.is_finite()) =>
            {
                bad(format!("compound poisson needs rate >= 0 and jump_sd >= 0, got {rate}, {jump_sd}"))
            }
            LevyModel::GammaSubordinator { a, c } if !(a > 0.0 && c > 0.0) => {
                bad(format!("gamma subordinator needs a > 0 and c > 0, got {a}, {c}"))
            }
            LevyModel::IgSubordinator { delta, gamma } if !(delta > 0.0 && gamma > 0.0) => {
                bad(format!("ig subordinator needs delta > 0 and gamma > 0, got {delta}, {gamma}"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_subordinator(&self) -> bool {
        matches!(self, LevyModel::GammaSubordinator { .. } | LevyModel::IgSubordinator { .. })
    }

    /// Open interval of x with E[e^{x L_1}] < ∞.
    pub fn strip(&self) -> (f64, f64) {
        match *self {
            LevyModel::Brownian { .. } | LevyModel::CompoundPoissonNormal { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            LevyModel::Nig { alpha, beta, .. } => (-alpha - beta, alpha - beta),
            LevyModel::GammaSubordinator { c, .. } => (f64::NEG_INFINITY, c),
            LevyModel::IgSubordinator { gamma, .. } => (f64::NEG_INFINITY, 0.5 * gamma * gamma),
        }
    }

    fn check_strip(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.strip();
        // the IG cumulant stays finite on the closed right edge
        let edge_ok = matches!(self, LevyModel::IgSubordinator { .. }) && x == hi;
        let nig_edge = matches!(self, LevyModel::Nig { .. }) && (x == hi || x == lo);
        if (x > lo && x < hi) || edge_ok || nig_edge {
            Ok(())
        } else {
            Err(LssError::Strip { x, lo, hi })
        }
    }

    /// φ(x) = log E[e^{x L_1}].
    pub fn cumulant(&self, x: f64) -> Result<f64> {
        self.check_strip(x)?;
        Ok(match *self {
            LevyModel::Brownian { drift, variance } => drift * x + 0.5 * variance * x * x,
            LevyModel::Nig { alpha, beta, mu, delta } => {
                mu * x
                    + delta
                        * ((alpha * alpha - beta * beta).sqrt()
                            - (alpha * alpha - (beta + x) * (beta + x)).max(0.0).sqrt())
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                rate * (jump_mean * x + 0.5 * jump_sd * jump_sd * x * x).exp_m1()
            }
            LevyModel::GammaSubordinator { a, c } => -a * (-x / c).ln_1p(),
            LevyModel::IgSubordinator { delta, gamma } => {
                delta * (gamma - (gamma * gamma - 2.0 * x).max(0.0).sqrt())
            }
        })
    }

    /// φ(z) continued analytically to complex z with Re z inside the strip.
    pub fn cumulant_complex(&self, z: Complex64) -> Result<Complex64> {
        self.check_strip(z.re)?;
        let one = Complex64::new(1.0, 0.0);
        Ok(match *self {
            LevyModel::Brownian { drift, variance } => drift * z + 0.5 * variance * z * z,
            LevyModel::Nig { alpha, beta, mu, delta } => {
                let w = z + beta;
                mu * z + delta * ((alpha * alpha - beta * beta).sqrt() - (alpha * alpha - w * w).sqrt())
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                rate * ((jump_mean * z + 0.5 * jump_sd * jump_sd * z * z).exp() - one)
            }
            LevyModel::GammaSubordinator { a, c } => -a * (one - z / c).ln(),
            LevyModel::IgSubordinator { delta, gamma } => {
                delta * (gamma - (gamma * gamma - 2.0 * z).sqrt())
            }
        })
    }

    /// Cumulant under the Esscher measure: φ^θ(x) = φ(x+θ) - φ(θ).
    pub fn esscher_cumulant(&self, theta: f64, x: f64) -> Result<f64> {
        Ok(self.cumulant(x + theta)? - self.cumulant(theta)?)
    }

    /// Complex version of [`esscher_cumulant`](Self::esscher_cumulant).
    pub fn esscher_cumulant_complex(&self, theta: f64, z: Complex64) -> Result<Complex64> {
        Ok(self.cumulant_complex(z + theta)? - self.cumulant(theta)?)
    }

    /// The law of L under the Esscher measure Q^θ, in the same family.
    pub fn esscher_triplet(&self, theta: f64) -> Result<LevyModel> {
        let (lo, hi) = self.strip();
        if !(theta > lo && theta < hi) {
            return Err(LssError::Strip { x: theta, lo, hi });
        }
        Ok(match *self {
            LevyModel::Brownian { drift, variance } => {
                LevyModel::Brownian { drift: drift + variance * theta, variance }
            }
            LevyModel::Nig { alpha, beta, mu, delta } => {
                LevyModel::Nig { alpha, beta: beta + theta, mu, delta }
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                let s2 = jump_sd * jump_sd;
                LevyModel::CompoundPoissonNormal {
                    rate: rate * (theta * jump_mean + 0.5 * theta * theta * s2).exp(),
                    jump_mean: jump_mean + theta * s2,
                    jump_sd,
                }
            }
            LevyModel::GammaSubordinator { a, c } => LevyModel::GammaSubordinator { a, c: c - theta },
            LevyModel::IgSubordinator { delta, gamma } => LevyModel::IgSubordinator {
                delta,
                gamma: (gamma * gamma - 2.0 * theta).sqrt(),
            },
        })
    }

    /// E[L_1].
    pub fn kappa1(&self) -> f64 {
        match *self {
            LevyModel::Brownian { drift, .. } => drift,
            LevyModel::Nig { alpha, beta, mu, delta } => {
                mu + delta * beta / (alpha * alpha - beta * beta).sqrt()
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, .. } => rate * jump_mean,
            LevyModel::GammaSubordinator { a, c } => a / c,
            LevyModel::IgSubordinator { delta, gamma } => delta / gamma,
        }
    }

    /// Var[L_1].
    pub fn kappa2(&self) -> f64 {
        match *self {
            LevyModel::Brownian { variance, .. } => variance,
            LevyModel::Nig { alpha, beta, delta, .. } => {
                delta * alpha * alpha / (alpha * alpha - beta * beta).powf(1.5)
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                rate * (jump_mean * jump_mean + jump_sd * jump_sd)
            }
            LevyModel::GammaSubordinator { a, c } => a / (c * c),
            LevyModel::IgSubordinator { delta, gamma } => delta / gamma.powi(3),
        }
    }

    /// Gaussian coefficient b of the triplet.
    pub fn gaussian_variance(&self) -> f64 {
        match *self {
            LevyModel::Brownian { variance, .. } => variance,
            _ => 0.0,
        }
    }

    /// Density of the Lévy measure ℓ(dz)/dz at z != 0 (zero for Brownian motion).
    pub fn levy_density(&self, z: f64) -> f64 {
        match *self {
            LevyModel::Brownian { .. } => 0.0,
            LevyModel::Nig { alpha, beta, delta, .. } => {
                if z == 0.0 {
                    return f64::INFINITY;
                }
                let az = alpha * z.abs();
                let k1 = specfun::bessel_k_scaled(1.0, az).unwrap_or(0.0);
                alpha * delta / (std::f64::consts::PI * z.abs()) * k1 * (beta * z - az).exp()
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                let u = (z - jump_mean) / jump_sd;
                rate * (-0.5 * u * u).exp() / (jump_sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            LevyModel::GammaSubordinator { a, c } => {
                if z <= 0.0 { 0.0 } else { a * (-c * z).exp() / z }
            }
            LevyModel::IgSubordinator { delta, gamma } => {
                if z <= 0.0 {
                    0.0
                } else {
                    delta / (2.0 * std::f64::consts::PI).sqrt()
                        * z.powf(-1.5)
                        * (-0.5 * gamma * gamma * z).exp()
                }
            }
        }
    }

    /// Drift d of the triplet (d, b, ℓ) with truncation function 1_{|z|<=1}:
    /// d = E[L_1] - ∫_{|z|>1} z ℓ(dz).
    pub fn truncated_drift(&self) -> Result<f64> {
        if let LevyModel::Brownian { drift, .. } = *self {
            return Ok(drift);
        }
        let scale = (self.kappa2().sqrt()).max(1.0);
        let right = quad::integrate_to_inf(|z| z * self.levy_density(z), 1.0, scale, 1e-13)?;
        let left = if self.is_subordinator() {
            0.0
        } else {
            quad::integrate_to_inf(|z| -z * self.levy_density(-z), 1.0, scale, 1e-13)?
        };
        Ok(self.kappa1() - right - left)
    }

    /// One draw of L_dt.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> f64 {
        match *self {
            LevyModel::Brownian { drift, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                drift * dt + (variance * dt).sqrt() * z
            }
            LevyModel::Nig { alpha, beta, mu, delta } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                let w = sample_ig(rng, delta * dt / g, (delta * dt).powi(2));
                let z: f64 = rng.sample(StandardNormal);
                mu * dt + beta * w + w.sqrt() * z
            }
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                let n = sample_poisson(rng, rate * dt);
                if n == 0 {
                    return 0.0;
                }
                let z: f64 = rng.sample(StandardNormal);
                n as f64 * jump_mean + jump_sd * (n as f64).sqrt() * z
            }
            LevyModel::GammaSubordinator { a, c } => sample_gamma(rng, a * dt, 1.0 / c),
            LevyModel::IgSubordinator { delta, gamma } => {
                sample_ig(rng, delta * dt / gamma, (delta * dt).powi(2))
            }
        }
    }

    /// One draw of (L_dt, [L]_dt) where the quadratic variation is available
    /// pathwise: Brownian motion and compound Poisson.
    pub fn sample_with_qv<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> Option<(f64, f64)> {
        match *self {
            LevyModel::Brownian { variance, .. } => Some((self.sample(rng, dt), variance * dt)),
            LevyModel::CompoundPoissonNormal { rate, jump_mean, jump_sd } => {
                let n = sample_poisson(rng, rate * dt);
                let (mut sum, mut sq) = (0.0, 0.0);
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    let j = jump_mean + jump_sd * z;
                    sum += j;
                    sq += j * j;
                }
                Some((sum, sq))
            }
            _ => None,
        }
    }

    /// n i.i.d. draws of L_dt from the stream determined by `seed`.
    pub fn sample_increments(&self, dt: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| self.sample(&mut r, dt)).collect()
    }
}

pub(crate) fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, scale).expect("positive gamma parameters").sample(rng)
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive poisson mean").sample(rng) as u64
}

/// Inverse Gaussian draw with mean `mu` and shape `lambda`
/// (Michael, Schucany and Haas), using the root product μ² to avoid
/// cancellation when μ/λ is large.
pub fn sample_ig<R: Rng + ?Sized>(rng: &mut R, mu: f64, lambda: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    let y = n * n;
    let my = mu * y;
    let big = mu + mu * my / (2.0 * lambda) + mu / (2.0 * lambda) * (4.0 * lambda * my + my * my).sqrt();
    let small = mu * mu / big;
    let u: f64 = rng.random();
    if u * (mu + small) <= mu { small } else { big }
}
