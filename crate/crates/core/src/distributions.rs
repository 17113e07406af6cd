//! Generalised inverse Gaussian (GIG) and generalised hyperbolic (GH) laws.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::levy::sample_gamma;
use crate::optim::{nelder_mead, NelderMead};
use crate::quad;
use crate::specfun;

/// GIG(λ, χ, ψ) with density ∝ x^{λ-1} exp(-(χ/x + ψx)/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GigParams {
    pub lambda: f64,
    pub chi: f64,
    pub psi: f64,
}

impl GigParams {
    pub fn new(lambda: f64, chi: f64, psi: f64) -> Result<Self> {
        let p = GigParams { lambda, chi, psi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let GigParams { lambda, chi, psi } = *self;
        let ok = (chi > 0.0 && psi >= 0.0 && lambda < 0.0)
            || (chi > 0.0 && psi > 0.0 && lambda == 0.0)
            || (chi >= 0.0 && psi > 0.0 && lambda > 0.0);
        if ok && lambda.is_finite() && chi.is_finite() && psi.is_finite() {
            Ok(())
        } else {
            Err(LssError::InvalidParams(format!(
                "gig parameters outside the admissible regions: lambda={lambda}, chi={chi}, psi={psi}"
            )))
        }
    }

    /// log of the normalising constant c in f(x) = c x^{λ-1} exp(-(χ/x + ψx)/2).
    fn ln_norm(&self) -> f64 {
        let GigParams { lambda, chi, psi } = *self;
        if chi == 0.0 {
            // Gamma(λ, rate ψ/2)
            lambda * (0.5 * psi).ln() - specfun::ln_gamma_unchecked(lambda)
        } else if psi == 0.0 {
            // inverse gamma with shape -λ and scale χ/2
            -lambda * (0.5 * chi).ln() - specfun::ln_gamma_unchecked(-lambda)
        } else {
            let om = (chi * psi).sqrt();
            0.5 * lambda * (psi / chi).ln()
                - 2f64.ln()
                - specfun::ln_bessel_k(lambda, om).expect("positive argument")
        }
    }

    /// Density at x > 0.
    pub fn density(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x <= 0.0 || x.is_nan() {
            return Err(LssError::Domain(format!("gig density needs x > 0, got {x}")));
        }
        Ok(self.density_unchecked(x))
    }

    pub(crate) fn density_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let ln = self.ln_norm() + (self.lambda - 1.0) * x.ln() - 0.5 * (self.chi / x + self.psi * x);
        ln.exp()
    }

    /// E[W^k] for k = 1, 2 where finite.
    fn raw_moment(&self, k: i32) -> f64 {
        let GigParams { lambda, chi, psi } = *self;
        let kf = k as f64;
        if chi == 0.0 {
            let mut m = 1.0;
            for j in 0..k {
                m *= (lambda + j as f64) * 2.0 / psi;
            }
            m
        } else if psi == 0.0 {
            let a = -lambda;
            if a <= kf {
                return f64::INFINITY;
            }
            let mut m = 1.0;
            for j in 1..=k {
                m *= 0.5 * chi / (a - j as f64);
            }
            m
        } else {
            let om = (chi * psi).sqrt();
            let r = specfun::ln_bessel_k(lambda + kf, om).expect("positive")
                - specfun::ln_bessel_k(lambda, om).expect("positive");
            (0.5 * kf * (chi / psi).ln() + r).exp()
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.raw_moment(2) - m * m
    }

    /// Mode of the density.
    pub fn mode(&self) -> f64 {
        let GigParams { lambda, chi, psi } = *self;
        if psi == 0.0 {
            return chi / (2.0 * (1.0 - lambda));
        }
        let l1 = lambda - 1.0;
        (l1 + (l1 * l1 + chi * psi).sqrt()) / psi
    }

    /// P(W <= x) by quadrature.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let head = if self.chi == 0.0 && self.lambda < 1.0 { Some(self.lambda - 1.0) } else { None };
        let m = self.mode().max(1e-12);
        let v = if x <= m {
            quad::integrate_endpoint_singular(|w| self.density_unchecked(w), 0.0, x, head, None, 1e-12)?
        } else {
            1.0 - quad::integrate_to_inf(|w| self.density_unchecked(w), x, m.max(x - m), 1e-12)?
        };
        Ok(v.clamp(0.0, 1.0))
    }

    /// One draw (Hörmann and Leydold ratio-of-uniforms family of samplers).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let GigParams { lambda, chi, psi } = *self;
        if chi == 0.0 {
            return sample_gamma(rng, lambda, 2.0 / psi);
        }
        if psi == 0.0 {
            return 0.5 * chi / sample_gamma(rng, -lambda, 1.0);
        }
        let lam = lambda.abs();
        let alpha = (chi / psi).sqrt();
        let omega = (chi * psi).sqrt();
        let x = if lam > 2.0 || omega > 3.0 {
            rou_shift(rng, lam, omega)
        } else if lam >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
            rou_noshift(rng, lam, omega)
        } else {
            concave_hat(rng, lam, omega)
        };
        if lambda < 0.0 { alpha / x } else { alpha * x }
    }
}

// The samplers below draw from the standardised density x^{λ-1} e^{-ω(x+1/x)/2}, λ >= 0.

fn std_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0).powi(2) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

fn rou_noshift<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = std_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * rng.random::<f64>();
        let v: f64 = rng.random();
        let x = u / v;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

fn rou_shift<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = std_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    // the bounding rectangle comes from the roots of a depressed cubic
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * PI).cos() - a / 3.0;
    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v: f64 = rng.random();
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

fn concave_hat<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let xm = std_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-1f64).exp() / omega;
    }
    let total = a0 + a1 + a2;
    loop {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= a0 {
            x = x0 * v / a0;
            hx = k0;
        } else {
            v -= a0;
            if v <= a1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= a1;
                let a = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        let u = rng.random::<f64>() * hx;
        if x > 0.0 && u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}

/// Subfamilies of the univariate GH class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    #[serde(rename = "GHYP")]
    Ghyp,
    #[serde(rename = "NIG")]
    Nig,
    #[serde(rename = "Student-t")]
    StudentT,
    #[serde(rename = "HYP")]
    Hyp,
    #[serde(rename = "VG")]
    Vg,
    #[serde(rename = "Gaussian")]
    Gaussian,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 6] =
        [FamilyTag::Ghyp, FamilyTag::Nig, FamilyTag::StudentT, FamilyTag::Hyp, FamilyTag::Vg, FamilyTag::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::Ghyp => "GHYP",
            FamilyTag::Nig => "NIG",
            FamilyTag::StudentT => "Student-t",
            FamilyTag::Hyp => "HYP",
            FamilyTag::Vg => "VG",
            FamilyTag::Gaussian => "Gaussian",
        }
    }
}

/// GH law in the (λ, ᾱ, μ, σ, γ) parametrisation: X = μ + Wγ + sqrt(W) σ Z,
/// with W ~ GIG normalised to E[W] = 1. `alpha_bar = +inf` is the Gaussian limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhParams {
    pub lambda: f64,
    pub alpha_bar: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
}

/// Law of the mixing variable W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mixing {
    Gig(GigParams),
    /// W ≡ 1.
    Dirac,
}

/// ψ = ᾱ K_{λ+1}(ᾱ)/K_λ(ᾱ), χ = ᾱ²/ψ.
pub fn alphabar_to_chipsi(p: &GhParams) -> Result<GigParams> {
    let ab = p.alpha_bar;
    if ab == 0.0 {
        return Err(LssError::Degenerate(
            "alpha_bar = 0 has no (chi, psi) image; use the boundary subfamily".into(),
        ));
    }
    if !(ab > 0.0 && ab.is_finite()) {
        return Err(LssError::InvalidParams(format!("alpha_bar must be positive and finite, got {ab}")));
    }
    let r = (specfun::ln_bessel_k(p.lambda + 1.0, ab)? - specfun::ln_bessel_k(p.lambda, ab)?).exp();
    let psi = ab * r;
    Ok(GigParams { lambda: p.lambda, chi: ab * ab / psi, psi })
}

impl GhParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.alpha_bar >= 0.0 && self.mu.is_finite() && self.gamma.is_finite()) {
            return Err(LssError::InvalidParams(format!("invalid gh parameters {self:?}")));
        }
        self.mixing().map(|_| ())
    }

    /// Mixing law, including the ᾱ = 0 boundaries (VG for λ > 0, Student-t for λ < -1).
    pub fn mixing(&self) -> Result<Mixing> {
        if self.alpha_bar.is_infinite() {
            return Ok(Mixing::Dirac);
        }
        if self.alpha_bar == 0.0 {
            if self.lambda > 0.0 {
                return Ok(Mixing::Gig(GigParams { lambda: self.lambda, chi: 0.0, psi: 2.0 * self.lambda }));
            }
            if self.lambda < -1.0 {
                return Ok(Mixing::Gig(GigParams {
                    lambda: self.lambda,
                    chi: 2.0 * (-self.lambda - 1.0),
                    psi: 0.0,
                }));
            }
            return Err(LssError::InvalidParams(format!(
                "alpha_bar = 0 needs lambda > 0 or lambda < -1, got {}",
                self.lambda
            )));
        }
        Ok(Mixing::Gig(alphabar_to_chipsi(self)?))
    }

    pub fn mean(&self) -> Result<f64> {
        Ok(match self.mixing()? {
            Mixing::Dirac => self.mu + self.gamma,
            Mixing::Gig(g) => self.mu + self.gamma * g.mean(),
        })
    }

    pub fn variance(&self) -> Result<f64> {
        Ok(match self.mixing()? {
            Mixing::Dirac => self.sigma * self.sigma,
            Mixing::Gig(g) => self.sigma * self.sigma * g.mean() + self.gamma * self.gamma * g.variance(),
        })
    }

    /// Precomputed log-density evaluator.
    pub fn log_density_fn(&self) -> Result<GhLogDensity> {
        self.validate()?;
        GhLogDensity::new(self)
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        Ok(self.log_density_fn()?.ln_pdf(x).exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mixing: &Mixing) -> f64 {
        let w = match mixing {
            Mixing::Dirac => 1.0,
            Mixing::Gig(g) => g.sample(rng),
        };
        let z: f64 = rng.sample(StandardNormal);
        self.mu + w * self.gamma + w.sqrt() * self.sigma * z
    }
}

/// log f(x) of a GH law with constants hoisted out.
#[derive(Debug, Clone)]
pub struct GhLogDensity {
    mu: f64,
    sigma: f64,
    gamma: f64,
    mix: Mixing,
    p: f64,
    b: f64,
    ln_const: f64,
}

impl GhLogDensity {
    fn new(gh: &GhParams) -> Result<Self> {
        let mix = gh.mixing()?;
        let s2 = gh.sigma * gh.sigma;
        let (p, b, ln_c) = match mix {
            Mixing::Dirac => (0.0, 0.0, 0.0),
            Mixing::Gig(g) => (g.lambda - 0.5, g.psi + gh.gamma * gh.gamma / s2, g.ln_norm()),
        };
        Ok(GhLogDensity {
            mu: gh.mu,
            sigma: gh.sigma,
            gamma: gh.gamma,
            mix,
            p,
            b,
            ln_const: ln_c - 0.5 * (2.0 * PI).ln() - gh.sigma.ln(),
        })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let d = x - self.mu;
        let s2 = self.sigma * self.sigma;
        let g = match self.mix {
            Mixing::Dirac => {
                let u = (d - self.gamma) / self.sigma;
                return -0.5 * u * u - 0.5 * (2.0 * PI).ln() - self.sigma.ln();
            }
            Mixing::Gig(g) => g,
        };
        // ∫ w^{p-1} exp(-(a/w + b w)/2) dw with a = χ + d²/σ², b = ψ + γ²/σ²
        let a = g.chi + d * d / s2;
        let p = self.p;
        let b = self.b;
        let integral = if a > 0.0 && b > 0.0 {
            let r = (a * b).sqrt();
            2f64.ln() + 0.5 * p * (a / b).ln() + specfun::ln_bessel_k(p, r).unwrap_or(f64::NEG_INFINITY)
        } else if a == 0.0 && b > 0.0 {
            if p <= 0.0 {
                return f64::INFINITY;
            }
            specfun::ln_gamma_unchecked(p) + p * (2.0 / b).ln()
        } else if b == 0.0 && a > 0.0 {
            if p >= 0.0 {
                return f64::INFINITY;
            }
            specfun::ln_gamma_unchecked(-p) + p * (0.5 * a).ln()
        } else {
            return f64::INFINITY;
        };
        self.ln_const + d * self.gamma / s2 + integral
    }
}

/// A maximum-likelihood fit within one GH subfamily.
#[derive(Debug, Clone, Serialize)]
pub struct FittedModel {
    pub params: GhParams,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_params: usize,
    pub family_tag: FamilyTag,
    pub symmetric: bool,
    pub converged: bool,
}

/// Number of free parameters of a subfamily.
pub fn family_dimension(family: FamilyTag, symmetric: bool) -> usize {
    let skew = if symmetric { 0 } else { 1 };
    match family {
        FamilyTag::Ghyp => 4 + skew,
        FamilyTag::Nig | FamilyTag::Hyp | FamilyTag::StudentT | FamilyTag::Vg => 3 + skew,
        FamilyTag::Gaussian => 2,
    }
}

fn decode(family: FamilyTag, symmetric: bool, u: &[f64]) -> GhParams {
    let mu = u[0];
    let sigma = u[1].exp();
    let mut k = 2;
    let mut next = || {
        let v = u[k];
        k += 1;
        v
    };
    let (lambda, alpha_bar) = match family {
        FamilyTag::Ghyp => {
            let l = next();
            (l, next().exp())
        }
        FamilyTag::Nig => (-0.5, next().exp()),
        FamilyTag::Hyp => (1.0, next().exp()),
        FamilyTag::StudentT => (-1.0 - next().exp(), 0.0),
        FamilyTag::Vg => (next().exp(), 0.0),
        FamilyTag::Gaussian => (0.0, f64::INFINITY),
    };
    let gamma = if symmetric || family == FamilyTag::Gaussian { 0.0 } else { next() };
    GhParams { lambda, alpha_bar, mu, sigma, gamma }
}

/// Sample log-likelihood.
pub fn log_likelihood(data: &[f64], p: &GhParams) -> Result<f64> {
    let f = p.log_density_fn()?;
    Ok(data.iter().map(|&x| f.ln_pdf(x)).sum())
}

/// Maximum-likelihood fit of one subfamily by Nelder–Mead from moment-based
/// starting values.
pub fn fit_gh_family(data: &[f64], family: FamilyTag, symmetric: bool) -> Result<FittedModel> {
    if data.len() < 50 {
        return Err(LssError::InvalidParams(format!("need at least 50 observations, got {}", data.len())));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return Err(LssError::Degenerate("data have zero or undefined variance".into()));
    }
    let sd = var.sqrt();
    let mut x0 = vec![mean, sd.ln()];
    match family {
        FamilyTag::Ghyp => x0.extend([-0.5, 0.0]),
        FamilyTag::Nig | FamilyTag::Hyp => x0.push(0.0),
        // Student-t with 4 degrees of freedom, VG with unit shape
        FamilyTag::StudentT => x0.push(0.0),
        FamilyTag::Vg => x0.push(0.0),
        FamilyTag::Gaussian => {}
    }
    if !symmetric && family != FamilyTag::Gaussian {
        x0.push(0.0);
    }
    let objective = |u: &[f64]| -> f64 {
        let p = decode(family, symmetric, u);
        if u.iter().any(|v| v.abs() > 50.0) {
            return f64::INFINITY;
        }
        match log_likelihood(data, &p) {
            Ok(l) if l.is_finite() => -l / n,
            _ => f64::INFINITY,
        }
    };
    let opts = NelderMead { max_evals: 3000 * x0.len(), ftol: 1e-11, xtol: 1e-7, step: 0.5 };
    let mut best = nelder_mead(objective, &x0, &opts);
    // restart from the optimum to escape a collapsed simplex
    for _ in 0..2 {
        let again = nelder_mead(objective, &best.x, &NelderMead { step: 0.1, ..opts.clone() });
        let improved = again.fx < best.fx - 1e-10;
        best = if again.fx <= best.fx { again } else { best };
        if !improved {
            break;
        }
    }
    if !best.fx.is_finite() {
        return Err(LssError::Convergence(format!("{} fit found no finite likelihood", family.name())));
    }
    let params = decode(family, symmetric, &best.x);
    let ll = -best.fx * n;
    let k = family_dimension(family, symmetric);
    Ok(FittedModel {
        params,
        log_likelihood: ll,
        aic: 2.0 * k as f64 - 2.0 * ll,
        n_params: k,
        family_tag: family,
        symmetric,
        converged: best.converged,
    })
}

/// Ascending AIC; ties broken by fewer parameters, then family order.
pub fn rank_by_aic(mut models: Vec<FittedModel>) -> Vec<FittedModel> {
    models.sort_by(|a, b| {
        a.aic
            .total_cmp(&b.aic)
            .then(a.n_params.cmp(&b.n_params))
            .then(a.family_tag.cmp(&b.family_tag))
    });
    models
}

/// Kolmogorov–Smirnov distance between a sample and a law given by its density,
/// integrating the density between consecutive order statistics.
/// `lower` is the left end of the support (`None` for the real line).
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], density: F, lower: Option<f64>) -> Result<f64> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let first = xs[0];
    let mut cdf = match lower {
        Some(lo) => quad::integrate(&density, lo, first, 1e-12)?,
        None => {
            let span = (xs[xs.len() - 1] - first).max(1e-6);
            quad::integrate_to_inf(|t| density(first - t), 0.0, 0.1 * span, 1e-12)?
        }
    };
    let mut d: f64 = 0.0;
    let mut prev = first;
    for (i, &x) in xs.iter().enumerate() {
        if x > prev {
            cdf += quad::integrate(&density, prev, x, 1e-12)?;
            prev = x;
        }
        d = d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs());
    }
    Ok(d)
}
