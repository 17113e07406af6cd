//! Stationary squared-volatility processes ω²: constant, BNS-OU, and the OU
//! process with GIG marginals that feeds gamma-density kernels.
//!
//! For the GIG case the background driving Lévy process (BDLP) is sampled as
//! a compound Poisson process whose Lévy density is obtained numerically from
//! the GIG Lévy density
//!
//! ```text
//! u(x) = x^{-1} e^{-ψx/2} [ ½ ∫_0^∞ e^{-xξ/(2χ)} g_|λ|(ξ) dξ + max(0, λ) ]
//! g_ν(ξ) = 2 / (π² ξ (J_ν²(√ξ) + Y_ν²(√ξ)))
//! ```
//!
//! through w(y) = -(y u(y))'. J² + Y² comes from Nicholson's integral.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::GigParams;
use crate::error::{LssError, Result};
use crate::kernels::KernelSpec;
use crate::levy::{sample_poisson, LevyModel};
use crate::quad;
use crate::rng;
use crate::specfun;

/// Model for the squared volatility ω².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum VolatilityModel {
    /// ω² ≡ c.
    Constant { c: f64 },
    /// ω²_t = ∫ e^{-λ(t-s)} dU_{λs}.
    BnsOu { lambda: f64, subordinator: LevyModel },
    /// σ²_t = ∫ e^{-λ(t-u)} dU_u with GIG marginals. The LSS integrand uses
    /// ω² = i* ∗ dU with i* from [`gig_ou_kernels`].
    GigOu { nu: f64, lambda: f64, target: GigParams },
}

/// The process an autocovariance refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcvfOf {
    Omega,
    OmegaSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Autocovariance {
    pub value: f64,
    pub of: AcvfOf,
}

/// Relative small-jump cutoff of the GIG BDLP, in units of the GIG mean.
const GIG_SMALL_JUMP: f64 = 1e-4;
/// Tail mass of i* dropped when building ω² = i* ∗ dU.
const ISTAR_TAIL: f64 = 1e-6;

impl VolatilityModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LssError::InvalidParams(m));
        match self {
            VolatilityModel::Constant { c } if !(*c >= 0.0 && c.is_finite()) => {
                bad(format!("constant volatility needs c >= 0, got {c}"))
            }
            VolatilityModel::BnsOu { lambda, subordinator } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return bad(format!("bns lambda must be positive, got {lambda}"));
                }
                subordinator.validate()?;
                if !subordinator.is_subordinator() {
                    return bad("bns volatility needs a subordinator".into());
                }
                Ok(())
            }
            VolatilityModel::GigOu { nu, lambda, target } => {
                if !(*nu > 0.5 && *nu < 1.0) {
                    return bad(format!("gig-ou needs 1/2 < nu < 1, got {nu}"));
                }
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return bad(format!("gig-ou lambda must be positive, got {lambda}"));
                }
                target.validate()?;
                if target.psi <= 0.0 {
                    return bad("gig-ou needs psi > 0 (finite variance)".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Stationary E[ω²].
    pub fn vol_mean(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            VolatilityModel::Constant { c } => *c,
            VolatilityModel::BnsOu { subordinator, .. } => subordinator.kappa1(),
            VolatilityModel::GigOu { target, .. } => target.mean(),
        })
    }

    /// Stationary Var[ω²].
    pub fn stationary_var(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            VolatilityModel::Constant { .. } => 0.0,
            VolatilityModel::BnsOu { subordinator, .. } => 0.5 * subordinator.kappa2(),
            VolatilityModel::GigOu { target, .. } => target.variance(),
        })
    }

    /// Autocovariance at lag h. Constant volatility reports γ_ω ≡ 0; the OU
    /// models report γ_{ω²}(h) = Var[ω²] e^{-λh} (for GIG-OU this is the
    /// autocovariance of σ²). The `of` field says which.
    pub fn vol_acvf(&self, h: f64) -> Result<Autocovariance> {
        let var = self.stationary_var()?;
        Ok(match self.mean_reversion() {
            None => Autocovariance { value: 0.0, of: AcvfOf::Omega },
            Some(l) => Autocovariance { value: var * (-l * h.abs()).exp(), of: AcvfOf::OmegaSquared },
        })
    }

    pub fn mean_reversion(&self) -> Option<f64> {
        match self {
            VolatilityModel::Constant { .. } => None,
            VolatilityModel::BnsOu { lambda, .. } | VolatilityModel::GigOu { lambda, .. } => Some(*lambda),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VolatilityModel::Constant { .. })
    }

    /// Prepares the model for repeated path sampling.
    pub fn sampler(&self) -> Result<VolSampler> {
        self.validate()?;
        let bdlp = match self {
            VolatilityModel::GigOu { target, .. } => {
                Some(GigLevyMeasure::new(*target)?.bdlp(GIG_SMALL_JUMP * target.mean())?)
            }
            _ => None,
        };
        Ok(VolSampler { model: self.clone(), bdlp })
    }

    /// Stationary path of the OU squared volatility at t_k = k dt, k < n.
    pub fn sample_vol_path(&self, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.sampler()?.vol_path(dt, n, seed)
    }

    /// The ω² that enters the stochastic integral, on cells [k dt, (k+1) dt).
    ///
    /// Constant and BNS return the path values at left endpoints. GIG-OU
    /// returns cell averages of i* ∗ dU computed from the jump times.
    pub fn sample_omega_sq(&self, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.sampler()?.omega_sq(dt, n, seed)
    }

    /// Monte Carlo estimate of E[ω] and γ_ω(k dt) for k in `lags` from one
    /// path of length n.
    pub fn omega_acvf_mc(&self, lags: &[usize], dt: f64, n: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
        let w: Vec<f64> = self.sample_omega_sq(dt, n, seed)?.into_iter().map(f64::sqrt).collect();
        let m = w.iter().sum::<f64>() / n as f64;
        let acvf = lags
            .iter()
            .map(|&k| {
                if k >= n {
                    return f64::NAN;
                }
                let s: f64 = (0..n - k).map(|i| (w[i] - m) * (w[i + k] - m)).sum();
                s / (n - k) as f64
            })
            .collect();
        Ok((m, acvf))
    }
}

/// A validated model with its precomputed jump tables.
#[derive(Debug, Clone)]
pub struct VolSampler {
    model: VolatilityModel,
    bdlp: Option<GigBdlp>,
}

impl VolSampler {
    pub fn model(&self) -> &VolatilityModel {
        &self.model
    }

    /// See [`VolatilityModel::sample_vol_path`].
    pub fn vol_path(&self, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        check_grid(dt)?;
        let mut r = rng::stream(seed, 0);
        Ok(match (&self.model, &self.bdlp) {
            (VolatilityModel::Constant { c }, _) => vec![*c; n],
            (VolatilityModel::BnsOu { lambda, subordinator }, _) => bns_path(*lambda, subordinator, dt, n, &mut r),
            (VolatilityModel::GigOu { lambda, target, .. }, Some(b)) => gig_ou_path(*lambda, target, b, dt, n, &mut r),
            (VolatilityModel::GigOu { .. }, None) => unreachable!("sampler built without jump table"),
        })
    }

    /// See [`VolatilityModel::sample_omega_sq`].
    pub fn omega_sq(&self, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        match (&self.model, &self.bdlp) {
            (VolatilityModel::GigOu { nu, lambda, .. }, Some(b)) => {
                check_grid(dt)?;
                let mut r = rng::stream(seed, 1);
                Ok(gig_istar_cells(*nu, *lambda, b, dt, n, &mut r))
            }
            _ => self.vol_path(dt, n, seed),
        }
    }
}

fn check_grid(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(LssError::InvalidParams(format!("time step must be positive, got {dt}")))
    }
}

/// Exact decay plus the subordinator increment weighted by the average of
/// e^{-λ(t_{k+1}-u)} over the step, which keeps the stationary mean exact.
fn bns_path<R: Rng + ?Sized>(lambda: f64, sub: &LevyModel, dt: f64, n: usize, r: &mut R) -> Vec<f64> {
    let step = |x: f64, h: f64, r: &mut R| {
        let d = (-lambda * h).exp();
        let w = -(-lambda * h).exp_m1() / (lambda * h);
        d * x + w * sub.sample(r, lambda * h)
    };
    let mut x = sub.kappa1();
    let burn = 20.0 / lambda;
    let hb = dt.max(burn / 2e5);
    for _ in 0..(burn / hb).ceil() as usize {
        x = step(x, hb, r);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        x = step(x, dt, r);
    }
    out
}

fn gig_ou_path<R: Rng + ?Sized>(
    lambda: f64,
    target: &GigParams,
    bdlp: &GigBdlp,
    dt: f64,
    n: usize,
    r: &mut R,
) -> Vec<f64> {
    let d = (-lambda * dt).exp();
    let drift = bdlp.small_jump_mean * (1.0 - d);
    let mut x = target.sample(r);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        x = d * x + drift;
        for _ in 0..sample_poisson(r, lambda * bdlp.rate * dt) {
            let tau: f64 = r.random::<f64>() * dt;
            x += bdlp.sample_jump(r) * (-lambda * (dt - tau)).exp();
        }
    }
    out
}

fn gig_istar_cells<R: Rng + ?Sized>(
    nu: f64,
    lambda: f64,
    bdlp: &GigBdlp,
    dt: f64,
    n: usize,
    r: &mut R,
) -> Vec<f64> {
    let a = 2.0 - 2.0 * nu;
    // window with i* tail mass below ISTAR_TAIL
    let mut w = (a.max(1.0)) / lambda;
    while 1.0 - specfun::gamma_p_unchecked(a, lambda * w) > ISTAR_TAIL {
        w *= 1.5;
    }
    let tail = bdlp.jump_mean() * (1.0 - specfun::gamma_p_unchecked(a, lambda * w));
    let mut cells = vec![bdlp.small_jump_mean + tail; n];
    let span = w + n as f64 * dt;
    let count = sample_poisson(r, lambda * bdlp.rate * span);
    // λ ∫_0^x i* = P(a, λx)
    let big_i = |x: f64| if x <= 0.0 { 0.0 } else { specfun::gamma_p_unchecked(a, lambda * x) / lambda };
    let reach = (w / dt).ceil() as usize + 1;
    let near = reach.min(ISTAR_NEAR_CELLS);
    let exact = near.min(2);
    // cells at distance j >= near from the jump's own cell: expand the cell
    // average in the offset δ of the jump from its cell midpoint, to third order
    let far = istar_far_coefficients(a, lambda, dt, near, reach);
    // 2 <= j < near: the cell average is analytic in the offset, so use a
    // Chebyshev interpolant in it
    let cheb: Vec<[f64; CHEB_NODES]> = (exact..near)
        .map(|j| chebyshev_fit(|phi| (big_i((j + 1) as f64 * dt - phi) - big_i(j as f64 * dt - phi)) / dt, dt))
        .collect();
    let lead = reach as isize;
    let mut moments = vec![[0.0; 4]; if far.is_empty() { 0 } else { n + reach }];
    for _ in 0..count {
        let tau = -w + r.random::<f64>() * span;
        let size = bdlp.sample_jump(r);
        let k = (tau / dt).floor() as isize;
        let phi = tau - k as f64 * dt;
        for j in 0..near as isize {
            let c = k + j;
            if c < 0 {
                continue;
            }
            if c as usize >= n {
                break;
            }
            let v = if (j as usize) < exact {
                big_i((j + 1) as f64 * dt - phi) - big_i(j as f64 * dt - phi)
            } else {
                chebyshev_eval(&cheb[j as usize - exact], phi, dt) * dt
            };
            cells[c as usize] += size * v / dt;
        }
        if !moments.is_empty() && k + lead >= 0 && k < n as isize {
            let d = tau - (k as f64 + 0.5) * dt;
            let m = &mut moments[(k + lead) as usize];
            m[0] += size;
            m[1] += size * d;
            m[2] += size * d * d / 2.0;
            m[3] += size * d * d * d / 6.0;
        }
    }
    for (idx, m) in moments.iter().enumerate() {
        if m[0] == 0.0 {
            continue;
        }
        let k = idx as isize - lead;
        for (off, d) in far.iter().enumerate() {
            let c = k + (near + off) as isize;
            if c < 0 {
                continue;
            }
            if c as usize >= n {
                break;
            }
            cells[c as usize] += m[0] * d[0] + m[1] * d[1] + m[2] * d[2] + m[3] * d[3];
        }
    }
    cells
}

/// Cells closer than this to a jump are not expanded in the jump offset.
const ISTAR_NEAR_CELLS: usize = 16;
const CHEB_NODES: usize = 17;

/// Chebyshev coefficients of f on [0, h].
fn chebyshev_fit<F: Fn(f64) -> f64>(f: F, h: f64) -> [f64; CHEB_NODES] {
    let n = CHEB_NODES as f64;
    let vals: Vec<f64> = (0..CHEB_NODES)
        .map(|k| f(0.5 * h * (1.0 + (PI * (k as f64 + 0.5) / n).cos())))
        .collect();
    let mut c = [0.0; CHEB_NODES];
    for (m, cm) in c.iter_mut().enumerate() {
        let s: f64 = vals.iter().enumerate().map(|(k, v)| v * (PI * m as f64 * (k as f64 + 0.5) / n).cos()).sum();
        *cm = 2.0 * s / n;
    }
    c[0] *= 0.5;
    c
}

fn chebyshev_eval(c: &[f64; CHEB_NODES], x: f64, h: f64) -> f64 {
    let t = 2.0 * x / h - 1.0;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &cm in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + cm;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

/// Taylor coefficients in the jump offset δ of the cell average of i* at cell
/// distance j, for near <= j < reach. A jump at δ contributes Σ δ^m/m! D_m.
fn istar_far_coefficients(a: f64, lambda: f64, dt: f64, near: usize, reach: usize) -> Vec<[f64; 4]> {
    let p = a - 1.0;
    // a lies in (0, 1) for 1/2 < ν < 1
    let ln_c = (a - 1.0) * lambda.ln() - specfun::ln_gamma(a).unwrap_or(f64::NAN);
    let i0 = |u: f64| (ln_c + p * u.ln() - lambda * u).exp();
    let i1 = |u: f64| i0(u) * (p / u - lambda);
    let i2 = |u: f64| i0(u) * ((p / u - lambda).powi(2) - p / (u * u));
    let big_i = |x: f64| specfun::gamma_p_unchecked(a, lambda * x) / lambda;
    (near..reach)
        .map(|j| {
            let (u0, u1) = ((j as f64 - 0.5) * dt, (j as f64 + 0.5) * dt);
            [
                (big_i(u1) - big_i(u0)) / dt,
                -(i0(u1) - i0(u0)) / dt,
                (i1(u1) - i1(u0)) / dt,
                -(i2(u1) - i2(u0)) / dt,
            ]
        })
        .collect()
}

/// The volatility kernel i*(t) = (1/λ) ga(t; 2-2ν, λ) and drift kernel
/// q(t) = ga(t; 2ν-1, λ), for which q∗i* = g²∗i* = e^{-λt} with g the
/// Gamma(ν, λ) kernel.
pub fn gig_ou_kernels(nu: f64, lambda: f64) -> Result<(KernelSpec, KernelSpec)> {
    if !(nu > 0.5 && nu < 1.0) {
        return Err(LssError::InvalidParams(format!("need 1/2 < nu < 1, got {nu}")));
    }
    if !(lambda > 0.0) {
        return Err(LssError::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    let istar = KernelSpec::GammaDensity { shape: 2.0 - 2.0 * nu, rate: lambda, weight: 1.0 / lambda };
    let q = KernelSpec::GammaDensity { shape: 2.0 * nu - 1.0, rate: lambda, weight: 1.0 };
    Ok((istar, q))
}

/// (a ∗ b)(t) = ∫_0^t a(s) b(t-s) ds, where a and b may behave like s^pa and
/// s^pb at 0.
pub fn convolve<A: Fn(f64) -> f64, B: Fn(f64) -> f64>(
    a: A,
    pa: Option<f64>,
    b: B,
    pb: Option<f64>,
    t: f64,
) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let m = 0.5 * t;
    let left = quad::integrate_endpoint_singular(|s| a(s) * b(t - s), 0.0, m, pa, None, 1e-13)?;
    let right = quad::integrate_endpoint_singular(|u| a(t - u) * b(u), 0.0, m, pb, None, 1e-13)?;
    Ok(left + right)
}

/// J_ν(z)² + Y_ν(z)², by Nicholson's integral
/// (8/π²) ∫_0^∞ K_0(2z sinh t) cosh(2νt) dt, or its large-z expansion.
pub fn bessel_jy_modulus_sq(nu: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(LssError::Domain(format!("bessel modulus needs z > 0, got {z}")));
    }
    let nu = nu.abs();
    let mu = 4.0 * nu * nu;
    if z >= 50.0 + 5.0 * mu {
        let x = 1.0 / (2.0 * z).powi(2);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..6 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            term *= odd / (2.0 * kf) * (mu - odd * odd) * x;
            sum += term;
        }
        return Ok(2.0 / (PI * z) * sum);
    }
    let ln_cosh = |s: f64| 2.0 * nu * s + (-4.0 * nu * s).exp().ln_1p() - 2f64.ln();
    let f = |t: f64| {
        let arg = 2.0 * z * t.sinh();
        if arg <= 0.0 {
            return 0.0;
        }
        if arg > 750.0 {
            return 0.0;
        }
        match specfun::ln_bessel_k(0.0, arg) {
            Ok(l) => (l + ln_cosh(t)).exp(),
            Err(_) => 0.0,
        }
    };
    let scale = (0.5 / z).asinh();
    let v = quad::integrate_to_inf_with_head(f, 0.0, scale, Some(-0.5), 1e-11)?;
    Ok(8.0 / (PI * PI) * v)
}

/// Numerical Lévy measure of a GIG law and of the BDLP of the associated OU
/// process.
#[derive(Debug, Clone)]
pub struct GigLevyMeasure {
    target: GigParams,
    nu: f64,
    s0: f64,
    h: f64,
    /// ln g_ν(e^s) on s = s0 + i h.
    lng: Vec<f64>,
}

const XI_TABLE_MAX: f64 = 1e12;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

impl GigLevyMeasure {
    pub fn new(target: GigParams) -> Result<Self> {
        target.validate()?;
        if target.psi <= 0.0 {
            return Err(LssError::InvalidParams("gig levy measure needs psi > 0".into()));
        }
        let nu = target.lambda.abs();
        let h = 0.1;
        let s0 = if nu > 0.0 { (-30.0 / nu).clamp(-400.0, -30.0) } else { -60.0 };
        let mut lng = Vec::new();
        if target.chi > 0.0 {
            let steps = ((XI_TABLE_MAX.ln() - s0) / h).ceil() as usize;
            for i in 0..=steps {
                let s = s0 + i as f64 * h;
                let m = bessel_jy_modulus_sq(nu, (0.5 * s).exp())?;
                lng.push((2.0 / (PI * PI)).ln() - s - m.ln());
            }
        }
        Ok(GigLevyMeasure { target, nu, s0, h, lng })
    }

    /// ∫_0^∞ e^{-yξ/(2χ)} g(ξ) ξ^k dξ for k = 0, 1.
    fn xi_integral(&self, y: f64, k: i32) -> f64 {
        if self.lng.is_empty() {
            return 0.0;
        }
        let a = y / (2.0 * self.target.chi);
        let kf = k as f64;
        let last = self.lng.len() - 1;
        let mut sum = 0.0;
        let mut first_term = 0.0;
        for (i, &lg) in self.lng.iter().enumerate() {
            let s = self.s0 + i as f64 * self.h;
            let v = (lg + (kf + 1.0) * s - a * s.exp()).exp();
            if i == 0 {
                first_term = v;
            }
            let wt = if i == 0 || i == last { 0.5 } else { 1.0 };
            sum += wt * v;
        }
        sum *= self.h;
        // left of the table g ~ ξ^{ν-1}, or 1/(2ξ(L² + π²/4)) for ν = 0
        let left = if self.nu == 0.0 && k == 0 {
            let l0 = 0.5 * self.s0 - 2f64.ln() + EULER_GAMMA;
            2.0 / PI * ((2.0 * l0 / PI).atan() + 0.5 * PI)
        } else {
            first_term / (self.nu + kf)
        };
        // right of the table g ~ ξ^{-1/2}/π
        let xi1 = (self.s0 + last as f64 * self.h).exp();
        let p = kf + 0.5;
        let right = if a * xi1 > 700.0 {
            0.0
        } else {
            (specfun::ln_gamma_unchecked(p) - p * a.ln()).exp() / PI
                * (1.0 - specfun::gamma_p_unchecked(p, a * xi1))
        };
        sum + left + right
    }

    /// Lévy density u(x) of the GIG law.
    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let GigParams { lambda, psi, .. } = self.target;
        (-0.5 * psi * x).exp() / x * (0.5 * self.xi_integral(x, 0) + lambda.max(0.0))
    }

    /// Lévy density w(y) = -(y u(y))' of the BDLP in its natural clock, in
    /// which σ²_t = ∫ e^{-(t-s)} dŪ_s.
    pub fn bdlp_density(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let GigParams { lambda, chi, psi } = self.target;
        let inner = 0.5 * self.xi_integral(y, 0) + lambda.max(0.0);
        let d = if chi > 0.0 { self.xi_integral(y, 1) / (4.0 * chi) } else { 0.0 };
        (-0.5 * psi * y).exp() * (0.5 * psi * inner + d)
    }

    /// Compound Poisson approximation of the BDLP with jumps below `eps`
    /// replaced by their mean.
    pub fn bdlp(&self, eps: f64) -> Result<GigBdlp> {
        if !(eps > 0.0) {
            return Err(LssError::InvalidParams(format!("jump cutoff must be positive, got {eps}")));
        }
        let psi = self.target.psi;
        let y_max = (90.0 / psi).max(50.0 * self.target.mean());
        let h = 0.02;
        let ln0 = eps.ln();
        let steps = 2 * ((y_max.ln() - ln0) / (2.0 * h)).ceil() as usize;
        let ln_y: Vec<f64> = (0..=steps).map(|i| ln0 + i as f64 * h).collect();
        let f: Vec<f64> = ln_y.iter().map(|&l| l.exp() * self.bdlp_density(l.exp())).collect();
        let mut cum = vec![0.0; f.len()];
        for i in 1..f.len() {
            cum[i] = cum[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
        }
        let yf: Vec<f64> = f.iter().zip(&ln_y).map(|(v, l)| v * l.exp()).collect();
        let m1 = simpson(&yf, h);
        let rate = cum[cum.len() - 1];
        if !(rate.is_finite()) {
            return Err(LssError::Divergence("bdlp jump rate is not finite".into()));
        }
        let small_jump_mean = self.below(eps, 1)?;
        Ok(GigBdlp { rate, small_jump_mean, large_jump_mean: m1, ln_y, cum })
    }

    /// ∫_0^eps y^k w(y) dy.
    fn below(&self, eps: f64, k: i32) -> Result<f64> {
        let h = 0.05;
        let n = (14.0 / h) as usize;
        let ln_hi = eps.ln();
        let g = |l: f64| {
            let y = l.exp();
            y.powi(k + 1) * self.bdlp_density(y)
        };
        let vals: Vec<f64> = (0..=n).map(|i| g(ln_hi - 14.0 + i as f64 * h)).collect();
        let s = simpson(&vals, h);
        let slope = (vals[1] / vals[0]).ln() / h;
        if !(slope > 0.0) {
            return Err(LssError::Divergence("bdlp small-jump moment does not converge".into()));
        }
        Ok(s + vals[0] / slope)
    }

    /// ∫_0^∞ y^k w(y) dy for k = 1, 2 (E[Ū_1] and Var[Ū_1]).
    pub fn bdlp_moment(&self, k: i32) -> Result<f64> {
        let m = self.target.mean();
        let cut = 1e-3 * m;
        let head = self.below(cut, k)?;
        let scale = 1.0 / self.target.psi;
        let tail = quad::integrate_to_inf(|y| y.powi(k) * self.bdlp_density(y), cut, scale.min(m), 1e-10)?;
        Ok(head + tail)
    }
}

/// Composite Simpson rule on an even number of equal steps.
fn simpson(v: &[f64], h: f64) -> f64 {
    let n = v.len() - 1;
    let mut s = v[0] + v[n];
    for (i, x) in v.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * x } else { 2.0 * x };
    }
    s * h / 3.0
}

/// Compound Poisson BDLP: jump rate and size law above the cutoff, and the
/// mean contributed by the jumps below it, per unit of the natural clock.
#[derive(Debug, Clone)]
pub struct GigBdlp {
    pub rate: f64,
    pub small_jump_mean: f64,
    large_jump_mean: f64,
    ln_y: Vec<f64>,
    cum: Vec<f64>,
}

impl GigBdlp {
    pub fn sample_jump<R: Rng + ?Sized>(&self, r: &mut R) -> f64 {
        let u = r.random::<f64>() * self.rate;
        let i = self.cum.partition_point(|&c| c <= u).clamp(1, self.cum.len() - 1);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        (self.ln_y[i - 1] + frac * (self.ln_y[i] - self.ln_y[i - 1])).exp()
    }

    /// Mean of the jumps above the cutoff per unit time.
    pub fn jump_mean(&self) -> f64 {
        self.large_jump_mean
    }

    /// Total first moment of the BDLP per unit time.
    pub fn mean(&self) -> f64 {
        self.large_jump_mean + self.small_jump_mean
    }
}
