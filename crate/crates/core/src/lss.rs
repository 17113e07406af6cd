//! The Lévy semistationary process
//!
//! ```text
//! Y_t = μ + ∫_{-∞}^t g(t-s) ω_{s-} dL_s + γ ∫_{-∞}^t q(t-s) ω²_s ds
//! ```
//!
//! with simulation on a uniform grid, conditional and stationary second-order
//! structure, the semimartingale check and quadratic variation.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::kernels::KernelSpec;
use crate::levy::LevyModel;
use crate::quad;
use crate::rng;
use crate::volatility::{gig_ou_kernels, VolSampler, VolatilityModel};

/// An LSS process. `skew` weighs the drift term ∫ q(t-s) ω²_s ds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LssProcess {
    #[serde(default)]
    pub mu: f64,
    pub g: KernelSpec,
    #[serde(default)]
    pub q: Option<KernelSpec>,
    pub driver: LevyModel,
    pub vol: VolatilityModel,
    #[serde(default)]
    pub skew: f64,
}

/// Simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Relative L² tail mass of g beyond the truncation window.
    #[serde(default = "default_eps")]
    pub truncation_eps: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep ΔL, Δ[L] and ω² per step (needed for quadratic variation).
    #[serde(default)]
    pub store_increments: bool,
}

fn default_eps() -> f64 {
    1e-6
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig { dt, horizon, truncation_eps: default_eps(), n_paths, seed, store_increments: false }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt < self.horizon) {
            return Err(LssError::InvalidParams(format!(
                "need 0 < dt < horizon, got dt={}, horizon={}",
                self.dt, self.horizon
            )));
        }
        if !(self.truncation_eps > 0.0 && self.truncation_eps < 1.0) {
            return Err(LssError::InvalidParams("truncation_eps must lie in (0, 1)".into()));
        }
        if self.n_paths == 0 {
            return Err(LssError::InvalidParams("n_paths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step record of one path on [0, horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct PathDetail {
    pub dl: Vec<f64>,
    /// Increment of [L] over the step; (ΔL)² for drivers without a pathwise
    /// quadratic variation sampler.
    pub dqv: Vec<f64>,
    pub omega_sq: Vec<f64>,
}

/// Simulated paths on t_k = k dt, k = 0..=n_steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dt: f64,
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    pub details: Option<Vec<PathDetail>>,
}

/// One integrability condition with the value it was judged on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub pass: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    /// b ∫ g² E[ω²].
    pub gaussian_part: Condition,
    /// ∫ g² E[ω²].
    pub square_integrable: Condition,
    /// Split-exponent condition for the drift, with the exponent a used.
    pub drift: Option<(Condition, f64)>,
}

impl IntegrabilityReport {
    pub fn passes(&self) -> bool {
        self.gaussian_part.pass && self.square_integrable.pass && self.drift.is_none_or(|(c, _)| c.pass)
    }
}

/// Second-order structure of Y given a volatility path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub var: f64,
    pub cov: f64,
}

/// Stationary mean and variance. `estimated` is set when part of the value
/// came from a Monte Carlo estimate of the volatility dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryMoments {
    pub mean: f64,
    pub var: f64,
    pub estimated: bool,
}

/// Outcome of the semimartingale check. When it holds,
/// Y_t = Y_0 + g0 ∫_0^t ω_{s-} dL̄_s + ∫_0^t A_s ds with L̄ = L - E[L].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Semimartingale {
    pub is_semimartingale: bool,
    /// g(0+) when finite.
    pub g0: Option<f64>,
    /// Conditions (i) to (v): E|L_1| < ∞, finite g(0+) and q(0+), g' ∈ L²,
    /// g'ω square integrable, q'ω² integrable.
    pub conditions: [bool; 5],
}

impl LssProcess {
    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        if let Some(q) = &self.q {
            q.validate()?;
        }
        self.driver.validate()?;
        self.vol.validate()?;
        if !self.mu.is_finite() || !self.skew.is_finite() {
            return Err(LssError::InvalidParams("mu and skew must be finite".into()));
        }
        Ok(())
    }

    /// Evaluates the integrability conditions; never fails on a violation.
    pub fn check_integrability(&self) -> Result<IntegrabilityReport> {
        self.validate()?;
        let l2 = self.g.l2_norm_sq().unwrap_or(f64::INFINITY);
        let m2 = self.vol.vol_mean()?;
        let b = self.driver.gaussian_variance();
        let gv = if b == 0.0 { 0.0 } else { b * l2 * m2 };
        let sq = l2 * m2;
        let drift = match &self.q {
            Some(q) if self.skew != 0.0 => Some(split_exponent(q, &self.vol)?),
            _ => None,
        };
        Ok(IntegrabilityReport {
            gaussian_part: Condition { pass: gv.is_finite(), value: gv },
            square_integrable: Condition { pass: sq.is_finite(), value: sq },
            drift,
        })
    }

    fn drift_kernel(&self) -> Option<&KernelSpec> {
        if self.skew != 0.0 { self.q.as_ref() } else { None }
    }

    /// Truncation window in steps: the larger of the g and q windows.
    fn window_cells(&self, dt: f64, eps: f64) -> Result<usize> {
        let mut w = self.g.truncation_window(eps)?;
        if let Some(q) = self.drift_kernel() {
            w = w.max(q.truncation_window(eps)?);
        }
        Ok(((w / dt).ceil() as usize).max(1))
    }

    /// Cell weights of the discretised integrals: cell averages of g and q,
    /// and the first-cell residual ∫_0^dt g² - w_0² dt.
    pub fn discrete_weights(&self, dt: f64, eps: f64) -> Result<DiscreteWeights> {
        let m = self.window_cells(dt, eps)?;
        let g = self.g.cell_averages(dt, m)?;
        // a Gaussian correction would break pathwise positivity of subordinator-driven paths
        let residual = if self.driver.is_subordinator() {
            0.0
        } else {
            (self.g.integral_sq(0.0, dt)? - g[0] * g[0] * dt).max(0.0)
        };
        let q = match self.drift_kernel() {
            Some(q) => Some(q.cell_averages(dt, m)?),
            None => None,
        };
        Ok(DiscreteWeights { dt, g, q, residual })
    }

    /// Paths of Y on [0, horizon]. The window before 0 is filled with an
    /// independent stream so that Y_0 is a draw from the stationary law.
    pub fn simulate(&self, cfg: &SimConfig) -> Result<SimOutput> {
        cfg.validate()?;
        let report = self.check_integrability()?;
        if !report.passes() {
            return Err(LssError::Divergence(format!("integrability conditions fail: {report:?}")));
        }
        let w = self.discrete_weights(cfg.dt, cfg.truncation_eps)?;
        let sampler = self.vol.sampler()?;
        let n = cfg.n_steps();
        let m = w.g.len();
        let conv = Convolver::new(&w.g, w.q.as_deref(), m + n);
        let kappa2 = self.driver.kappa2();
        let out: Vec<(Vec<f64>, Option<PathDetail>)> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| self.one_path(cfg, &w, &sampler, &conv, kappa2, p as u64))
            .collect::<Result<_>>()?;
        let times = (0..=n).map(|k| k as f64 * cfg.dt).collect();
        let (paths, details): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        let details = if cfg.store_increments { Some(details.into_iter().flatten().collect()) } else { None };
        Ok(SimOutput { dt: cfg.dt, times, paths, details })
    }

    fn one_path(
        &self,
        cfg: &SimConfig,
        w: &DiscreteWeights,
        sampler: &VolSampler,
        conv: &Convolver,
        kappa2: f64,
        p: u64,
    ) -> Result<(Vec<f64>, Option<PathDetail>)> {
        let n = cfg.n_steps();
        let m = w.g.len();
        let seed = rng::derive_seed(cfg.seed, p);
        let omega_sq = sampler.omega_sq(cfg.dt, m + n, rng::derive_seed(seed, 0x766f6c))?;
        let mut pre = rng::stream(seed, 1);
        let mut post = rng::stream(seed, 2);
        let mut res = rng::stream(seed, 3);
        let mut x = Vec::with_capacity(m + n);
        let mut dl = Vec::new();
        let mut dqv = Vec::new();
        for (j, &o2) in omega_sq.iter().enumerate() {
            let r = if j < m { &mut pre } else { &mut post };
            let (l, qv) = match self.driver.sample_with_qv(r, cfg.dt) {
                Some(v) => v,
                None => {
                    let l = self.driver.sample(r, cfg.dt);
                    (l, l * l)
                }
            };
            x.push(o2.sqrt() * l);
            if cfg.store_increments && j >= m {
                dl.push(l);
                dqv.push(qv);
            }
        }
        let (yg, yq) = conv.apply(&x, &omega_sq);
        let mut y = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let i = m - 1 + k;
            let mut v = self.mu + yg[i];
            if let Some(d) = &yq {
                v += self.skew * cfg.dt * d[i];
            }
            if w.residual > 0.0 {
                let z: f64 = res.sample(StandardNormal);
                v += (kappa2 * omega_sq[i] * w.residual).sqrt() * z;
            }
            y.push(v);
        }
        let detail = cfg.store_increments.then(|| PathDetail { dl, dqv, omega_sq: omega_sq[m..].to_vec() });
        Ok((y, detail))
    }

    /// E(Y|ω), Var(Y|ω) and Cov(Y_{t+h}, Y_t|ω) for a volatility path given
    /// backwards in time: `omega_sq[i]` is ω² on [t-(i+1)dt, t-i dt).
    pub fn moments_conditional(&self, omega_sq: &[f64], dt: f64, h: f64) -> Result<ConditionalMoments> {
        self.validate()?;
        let need = self.g.truncation_window(1e-6)?;
        if (omega_sq.len() as f64) * dt < need {
            return Err(LssError::InvalidParams(format!(
                "volatility path covers {} but the kernel window is {need}",
                omega_sq.len() as f64 * dt
            )));
        }
        let k1 = self.driver.kappa1();
        let k2 = self.driver.kappa2();
        let head = self.g.head_power();
        let (mut mean, mut var, mut cov) = (0.0, 0.0, 0.0);
        for (i, &o2) in omega_sq.iter().enumerate() {
            let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
            if k1 != 0.0 {
                mean += o2.sqrt() * self.g.integral(a, b)?;
            }
            var += o2 * self.g.integral_sq(a, b)?;
            let ph = if i == 0 { head } else { None };
            cov += o2 * quad::integrate_endpoint_singular(|x| self.g.value(x + h) * self.g.value(x), a, b, ph, None, 1e-12)?;
        }
        let mut drift = 0.0;
        if let Some(q) = self.drift_kernel() {
            for (i, &o2) in omega_sq.iter().enumerate() {
                drift += o2 * q.integral(i as f64 * dt, (i + 1) as f64 * dt)?;
            }
        }
        Ok(ConditionalMoments { mean: self.mu + k1 * mean + self.skew * drift, var: k2 * var, cov: k2 * cov })
    }

    /// Stationary mean and variance of Y.
    ///
    /// Var(Y) = κ₂ E[ω²] ∫g² + Var(E[Y|ω]). The second term vanishes for
    /// constant volatility or κ₁ = γ = 0; for the GIG construction with its
    /// own drift kernel and κ₁ = 0 it is γ² Var(σ²). Otherwise it is
    /// estimated by Monte Carlo and the result is flagged.
    pub fn moments_stationary(&self) -> Result<StationaryMoments> {
        self.validate()?;
        let k1 = self.driver.kappa1();
        let k2 = self.driver.kappa2();
        let m2 = self.vol.vol_mean()?;
        let base = k2 * m2 * self.g.l2_norm_sq()?;
        let q_int = match self.drift_kernel() {
            Some(q) => q.mass()?,
            None => 0.0,
        };
        match self.closed_cond_mean_var()? {
            Some((m1, v)) => {
                let g_part = if k1 != 0.0 { k1 * m1 * self.g.mass()? } else { 0.0 };
                Ok(StationaryMoments {
                    mean: self.mu + g_part + self.skew * m2 * q_int,
                    var: base + v,
                    estimated: false,
                })
            }
            None => {
                let (mean, cm) = self.conditional_mean_series(0x6d6f6d)?;
                let v = sample_cov(&cm, &cm, 0);
                Ok(StationaryMoments { mean: self.mu + mean, var: base + v, estimated: true })
            }
        }
    }

    /// (E[ω], Var(E[Y|ω])) when available in closed form.
    fn closed_cond_mean_var(&self) -> Result<Option<(f64, f64)>> {
        let k1 = self.driver.kappa1();
        if let VolatilityModel::Constant { c } = self.vol {
            return Ok(Some((c.sqrt(), 0.0)));
        }
        if k1 != 0.0 {
            return Ok(None);
        }
        match (&self.vol, self.drift_kernel()) {
            (_, None) => Ok(Some((f64::NAN, 0.0))),
            (VolatilityModel::GigOu { nu, lambda, target }, Some(q)) if is_gig_drift(q, *nu, *lambda) => {
                Ok(Some((f64::NAN, self.skew * self.skew * target.variance())))
            }
            _ => Ok(None),
        }
    }

    /// Autocorrelation of Y at lag h, with the same estimation flag as
    /// [`LssProcess::moments_stationary`].
    pub fn acf(&self, h: f64) -> Result<(f64, bool)> {
        self.validate()?;
        let k2 = self.driver.kappa2();
        let m2 = self.vol.vol_mean()?;
        let l2 = self.g.l2_norm_sq()?;
        match self.closed_cond_mean_var()? {
            Some((_, 0.0)) => Ok((self.g.acf_zero_mean(h)?, false)),
            Some((_, v)) => {
                // GIG construction with κ₁ = 0: E[Y|ω] = μ + γσ², an OU process
                let lam = self.vol.mean_reversion().unwrap_or(0.0);
                let c = k2 * m2 * self.g.overlap(h)? + v * (-lam * h).exp();
                Ok((c / (k2 * m2 * l2 + v), false))
            }
            None => {
                let (_, cm) = self.conditional_mean_series(0x616366)?;
                let dt = self.mc_dt();
                let lag = (h / dt).round() as usize;
                let v0 = sample_cov(&cm, &cm, 0);
                let vh = sample_cov(&cm, &cm, lag);
                Ok(((k2 * m2 * self.g.overlap(h)? + vh) / (k2 * m2 * l2 + v0), true))
            }
        }
    }

    fn mc_dt(&self) -> f64 {
        let mut s = self.g.memory_scale();
        if let Some(l) = self.vol.mean_reversion() {
            s = s.min(1.0 / l);
        }
        s / 20.0
    }

    /// Long Monte Carlo series of κ₁∫gω + γ∫qω² (centred) and its mean.
    fn conditional_mean_series(&self, label: u64) -> Result<(f64, Vec<f64>)> {
        let dt = self.mc_dt();
        let w = self.discrete_weights(dt, 1e-8)?;
        let m = w.g.len();
        let n = 200_000usize.max(4 * m);
        let o2 = self.vol.sample_omega_sq(dt, m + n, rng::derive_seed(label, 7))?;
        let k1 = self.driver.kappa1();
        let x: Vec<f64> = o2.iter().map(|v| k1 * v.sqrt() * dt).collect();
        let conv = Convolver::new(&w.g, w.q.as_deref(), m + n);
        let (a, b) = conv.apply(&x, &o2);
        let mut s: Vec<f64> = (m - 1..m + n).map(|i| a[i]).collect();
        if let Some(b) = b {
            for (k, v) in s.iter_mut().enumerate() {
                *v += self.skew * dt * b[m - 1 + k];
            }
        }
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        for v in &mut s {
            *v -= mean;
        }
        Ok((mean, s))
    }

    /// Checks conditions (i) to (v) of the semimartingale proposition.
    pub fn semimartingale_decompose(&self) -> Semimartingale {
        let r = self.g.regularity();
        let q_reg = self.drift_kernel().map(|q| q.regularity());
        let finite_mean = self.driver.kappa1().is_finite();
        let finite_heads = r.g_at_zero.is_some() && q_reg.is_none_or(|q| q.g_at_zero.is_some());
        let g_prime = r.g_at_zero.is_some() && r.derivative_sq_integrable;
        let vol_ok = self.vol.vol_mean().map(|m| m.is_finite()).unwrap_or(false);
        let q_prime = q_reg.is_none_or(|q| q.g_at_zero.is_some());
        let conditions = [finite_mean, finite_heads, g_prime, g_prime && vol_ok, q_prime && vol_ok];
        Semimartingale { is_semimartingale: conditions.iter().all(|&c| c), g0: r.g_at_zero, conditions }
    }

    /// Analytic [Y]_t = g(0+)² ∫_0^t ω²_{s-} d[L]_s and realised Σ (ΔY)²,
    /// both cumulative on the simulation grid.
    pub fn quadratic_variation(&self, path: &[f64], detail: &PathDetail) -> Result<(Vec<f64>, Vec<f64>)> {
        let sm = self.semimartingale_decompose();
        if !sm.is_semimartingale {
            return Err(LssError::NotSemimartingale(format!(
                "conditions (i)-(v) = {:?}",
                sm.conditions
            )));
        }
        let g0 = sm.g0.unwrap_or(0.0);
        let n = detail.dqv.len();
        if path.len() != n + 1 {
            return Err(LssError::InvalidParams("path and increments have different lengths".into()));
        }
        let mut analytic = Vec::with_capacity(n + 1);
        let mut realised = Vec::with_capacity(n + 1);
        let (mut a, mut r) = (0.0, 0.0);
        analytic.push(0.0);
        realised.push(0.0);
        for j in 0..n {
            a += g0 * g0 * detail.omega_sq[j] * detail.dqv[j];
            r += (path[j + 1] - path[j]).powi(2);
            analytic.push(a);
            realised.push(r);
        }
        Ok((analytic, realised))
    }
}

fn is_gig_drift(q: &KernelSpec, nu: f64, lambda: f64) -> bool {
    match (q, gig_ou_kernels(nu, lambda)) {
        (KernelSpec::GammaDensity { shape, rate, weight }, Ok((_, KernelSpec::GammaDensity { shape: s, rate: r, weight: w }))) => {
            (shape - s).abs() < 1e-12 && (rate - r).abs() < 1e-12 && (weight - w).abs() < 1e-12
        }
        _ => false,
    }
}

fn split_exponent(q: &KernelSpec, vol: &VolatilityModel) -> Result<(Condition, f64)> {
    let m4 = vol.stationary_var()? + vol.vol_mean()?.powi(2);
    let head = q.head_power();
    let scale = q.memory_scale().max(1e-3);
    let power_int = |c: f64| -> f64 {
        if let Some(p) = head {
            if c * p <= -1.0 {
                return f64::INFINITY;
            }
        }
        quad::integrate_to_inf_with_head(|x| q.value(x).abs().powf(c), 0.0, scale, head.map(|p| c * p), 1e-10)
            .unwrap_or(f64::INFINITY)
    };
    let mut last = (f64::INFINITY, 0.5);
    for k in 1..10 {
        let a = k as f64 / 10.0;
        let v = power_int(2.0 * a) * power_int(2.0 * (1.0 - a)) * m4;
        if v.is_finite() {
            return Ok((Condition { pass: true, value: v }, a));
        }
        last = (v, a);
    }
    Ok((Condition { pass: false, value: last.0 }, last.1))
}

/// Discretised kernel weights used by [`LssProcess::simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWeights {
    pub dt: f64,
    pub g: Vec<f64>,
    pub q: Option<Vec<f64>>,
    pub residual: f64,
}

impl DiscreteWeights {
    /// Variance of the discretised integral per unit κ₂ω².
    pub fn variance(&self) -> f64 {
        self.g.iter().map(|w| w * w).sum::<f64>() * self.dt + self.residual
    }

    /// Autocovariance at lag k steps per unit κ₂ω².
    pub fn autocovariance(&self, k: usize) -> f64 {
        if k == 0 {
            return self.variance();
        }
        self.g.iter().zip(self.g.iter().skip(k)).map(|(a, b)| a * b).sum::<f64>() * self.dt
    }
}

/// y_i = Σ_m w_m x_{i-m}, by FFT for long inputs.
struct Convolver {
    g: Vec<f64>,
    q: Option<Vec<f64>>,
    len: usize,
    fft: Option<FftPlan>,
}

struct FftPlan {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    g_hat: Vec<Complex<f64>>,
    q_hat: Option<Vec<Complex<f64>>>,
}

impl Convolver {
    fn new(g: &[f64], q: Option<&[f64]>, len: usize) -> Self {
        let direct = (g.len() as f64) * (len as f64) < 4e5;
        let fft = if direct {
            None
        } else {
            let size = (g.len() + len).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(size);
            let inverse = planner.plan_fft_inverse(size);
            let transform = |w: &[f64]| {
                let mut buf: Vec<Complex<f64>> = w.iter().map(|&v| Complex::new(v, 0.0)).collect();
                buf.resize(size, Complex::new(0.0, 0.0));
                forward.process(&mut buf);
                buf
            };
            let g_hat = transform(g);
            let q_hat = q.map(transform);
            Some(FftPlan { size, forward, inverse, g_hat, q_hat })
        };
        Convolver { g: g.to_vec(), q: q.map(<[f64]>::to_vec), len, fft }
    }

    fn apply(&self, x: &[f64], o2: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        debug_assert_eq!(x.len(), self.len);
        match &self.fft {
            None => (direct(&self.g, x), self.q.as_ref().map(|q| direct(q, o2))),
            Some(p) => {
                let run = |hat: &[Complex<f64>], v: &[f64]| {
                    let mut buf: Vec<Complex<f64>> = v.iter().map(|&a| Complex::new(a, 0.0)).collect();
                    buf.resize(p.size, Complex::new(0.0, 0.0));
                    p.forward.process(&mut buf);
                    for (b, h) in buf.iter_mut().zip(hat) {
                        *b *= h;
                    }
                    p.inverse.process(&mut buf);
                    let s = 1.0 / p.size as f64;
                    buf[..v.len()].iter().map(|c| c.re * s).collect::<Vec<f64>>()
                };
                (run(&p.g_hat, x), p.q_hat.as_ref().map(|h| run(h, o2)))
            }
        }
    }
}

fn direct(w: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let top = w.len().min(i + 1);
            (0..top).map(|m| w[m] * x[i - m]).sum()
        })
        .collect()
}

fn sample_cov(a: &[f64], b: &[f64], lag: usize) -> f64 {
    let n = a.len().min(b.len());
    if lag >= n {
        return f64::NAN;
    }
    (0..n - lag).map(|i| a[i + lag] * b[i]).sum::<f64>() / (n - lag) as f64
}

/// A weighted sum Σ w_i Y^{(i)} of independent LSS processes.
#[derive(Debug, Clone)]
pub struct Superposition {
    pub factors: Vec<LssProcess>,
    pub weights: Vec<f64>,
}

/// Builds a superposition; the weights must be nonnegative and sum to 1.
pub fn superpose(factors: Vec<LssProcess>, weights: Vec<f64>) -> Result<Superposition> {
    if factors.is_empty() || factors.len() != weights.len() {
        return Err(LssError::InvalidParams("need one weight per factor".into()));
    }
    if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(LssError::InvalidParams(format!("weights must be nonnegative and sum to 1, got {weights:?}")));
    }
    Ok(Superposition { factors, weights })
}

impl Superposition {
    pub fn moments_stationary(&self) -> Result<StationaryMoments> {
        let mut out = StationaryMoments { mean: 0.0, var: 0.0, estimated: false };
        for (f, &w) in self.factors.iter().zip(&self.weights) {
            let m = f.moments_stationary()?;
            out.mean += w * m.mean;
            out.var += w * w * m.var;
            out.estimated |= m.estimated;
        }
        Ok(out)
    }

    pub fn acf(&self, h: f64) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (f, &w) in self.factors.iter().zip(&self.weights) {
            let v = w * w * f.moments_stationary()?.var;
            num += v * f.acf(h)?.0;
            den += v;
        }
        Ok(num / den)
    }

    /// Paths of the weighted sum; factor i uses a seed derived from (seed, i).
    pub fn simulate(&self, cfg: &SimConfig) -> Result<SimOutput> {
        let mut total: Option<SimOutput> = None;
        for (i, (f, &w)) in self.factors.iter().zip(&self.weights).enumerate() {
            let mut c = cfg.clone();
            c.seed = rng::derive_seed(cfg.seed, 0x5355_5000 + i as u64);
            c.store_increments = false;
            let o = f.simulate(&c)?;
            match &mut total {
                None => {
                    let mut o = o;
                    for p in &mut o.paths {
                        p.iter_mut().for_each(|v| *v *= w);
                    }
                    total = Some(o);
                }
                Some(t) => {
                    for (tp, op) in t.paths.iter_mut().zip(&o.paths) {
                        for (a, b) in tp.iter_mut().zip(op) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
        Ok(total.expect("at least one factor"))
    }
}

const MAGIC: &[u8; 4] = b"LSSP";
const FORMAT_VERSION: u32 = 1;

impl SimOutput {
    /// CSV with a time column and one column per path.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.paths.len()).map(|i| format!("path_{i}")));
        wr.write_record(&header).map_err(io_err)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(self.paths.iter().map(|p| format!("{}", p[k])));
            wr.write_record(&row).map_err(io_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Little-endian binary: "LSSP", version u32, n_paths u64, n_steps u64,
    /// dt f64, then the paths one after another.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n_steps = self.times.len().saturating_sub(1) as u64;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.paths.len() as u64).to_le_bytes())?;
        w.write_all(&n_steps.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for p in &self.paths {
            for v in p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<SimOutput> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LssError::InvalidParams("not an LSSP file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(LssError::InvalidParams(format!("unsupported LSSP version {version}")));
        }
        r.read_exact(&mut b8)?;
        let n_paths = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let n_steps = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let dt = f64::from_le_bytes(b8);
        let mut paths = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let mut p = Vec::with_capacity(n_steps + 1);
            for _ in 0..=n_steps {
                r.read_exact(&mut b8)?;
                p.push(f64::from_le_bytes(b8));
            }
            paths.push(p);
        }
        let times = (0..=n_steps).map(|k| k as f64 * dt).collect();
        Ok(SimOutput { dt, times, paths, details: None })
    }
}

fn io_err(e: csv::Error) -> LssError {
    LssError::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GigParams;

    fn ou_process(alpha: f64, c: f64) -> LssProcess {
        LssProcess {
            mu: 0.0,
            g: KernelSpec::Ou { alpha },
            q: None,
            driver: LevyModel::standard_brownian(),
            vol: VolatilityModel::Constant { c },
            skew: 0.0,
        }
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn ou_variance_matches_closed_form() {
        let alpha = 2.0;
        let p = ou_process(alpha, 1.0);
        let out = p.simulate(&SimConfig::new(0.01, 1.0, 4000, 7)).unwrap();
        let last: Vec<f64> = out.paths.iter().map(|v| *v.last().unwrap()).collect();
        let sq: Vec<f64> = last.iter().map(|x| x * x).collect();
        let (v, se) = mean_se(&sq);
        assert!((v - 1.0 / (2.0 * alpha)).abs() < 4.0 * se, "{v} ± {se}");
        let (m, se) = mean_se(&last);
        assert!(m.abs() < 4.0 * se);
    }

    #[test]
    fn centred_driver_mean_is_mu() {
        let mut p = ou_process(1.0, 1.0);
        p.mu = 3.0;
        p.driver = LevyModel::Nig { alpha: 2.0, beta: 0.0, mu: 0.0, delta: 1.0 };
        let out = p.simulate(&SimConfig::new(0.05, 1.0, 2000, 1)).unwrap();
        let first: Vec<f64> = out.paths.iter().map(|v| v[0]).collect();
        let (m, se) = mean_se(&first);
        assert!((m - 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn same_seed_same_paths() {
        let p = ou_process(1.0, 1.0);
        let cfg = SimConfig::new(0.1, 2.0, 5, 99);
        assert_eq!(p.simulate(&cfg).unwrap(), p.simulate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 100;
        assert_ne!(p.simulate(&cfg).unwrap().paths, p.simulate(&other).unwrap().paths);
    }

    #[test]
    fn fft_and_direct_convolution_agree() {
        let w: Vec<f64> = (0..700).map(|i| (-0.01 * i as f64).exp()).collect();
        let x: Vec<f64> = (0..1500).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let c = Convolver::new(&w, None, x.len());
        assert!(c.fft.is_some());
        let (a, _) = c.apply(&x, &x);
        let b = direct(&w, &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn integrability_examples() {
        let r = ou_process(0.5, 1.0).check_integrability().unwrap();
        assert!(r.passes());
        assert!((r.gaussian_part.value - 1.0).abs() < 1e-15);
        let mut p = ou_process(1.0, 1.0);
        p.vol = VolatilityModel::BnsOu { lambda: 1.0, subordinator: LevyModel::GammaSubordinator { a: 2.0, c: 1.0 } };
        assert!(p.check_integrability().unwrap().passes());
        p.g = KernelSpec::Bjerksund { sigma: 2.0, b: 4.0 };
        let r = p.check_integrability().unwrap();
        assert!((r.square_integrable.value - 2.0).abs() < 1e-14);
        // GIG drift kernel ga(0.344, λ) passes with some split exponent
        let (istar, q) = gig_ou_kernels(0.672, 0.055).unwrap();
        let _ = istar;
        p.q = Some(q);
        p.skew = 0.5;
        let r = p.check_integrability().unwrap();
        let (c, a) = r.drift.unwrap();
        assert!(c.pass && a > 0.0 && a < 1.0);
    }

    #[test]
    fn conditional_moments_constant_path() {
        let p = LssProcess { driver: LevyModel::Brownian { drift: 0.3, variance: 2.0 }, ..ou_process(1.5, 1.0) };
        let path = vec![1.0; 2000];
        let m = p.moments_conditional(&path, 0.01, 0.4).unwrap();
        assert!((m.mean - 0.3 / 1.5).abs() < 1e-10);
        assert!((m.var - 2.0 / 3.0).abs() < 1e-10);
        assert!((m.cov - 2.0 * KernelSpec::Ou { alpha: 1.5 }.overlap(0.4).unwrap()).abs() < 1e-10);
        let short = vec![1.0; 10];
        assert!(p.moments_conditional(&short, 0.01, 0.0).is_err());
    }

    #[test]
    fn conditional_moments_against_refined_riemann_sum() {
        let p = LssProcess { driver: LevyModel::Brownian { drift: 0.2, variance: 1.0 }, ..ou_process(1.0, 1.0) };
        let dt = 0.05;
        let path: Vec<f64> = (0..400).map(|i| 1.0 + 0.5 * ((i as f64) * 0.37).sin()).collect();
        let h: f64 = 0.3;
        let m = p.moments_conditional(&path, dt, h).unwrap();
        // midpoint sums at dt/10 against the same piecewise-constant path
        let f = dt / 10.0;
        let (mut mean, mut var, mut cov) = (0.0, 0.0, 0.0);
        for k in 0..path.len() * 10 {
            let x = (k as f64 + 0.5) * f;
            let o2 = path[k / 10];
            mean += (-x).exp() * o2.sqrt() * f;
            var += (-2.0 * x).exp() * o2 * f;
            cov += (-(x + h)).exp() * (-x).exp() * o2 * f;
        }
        assert!(((m.mean - 0.2 * mean) / m.mean).abs() < 1e-3);
        assert!(((m.var - var) / m.var).abs() < 1e-3);
        assert!(((m.cov - cov) / m.cov).abs() < 1e-3);
    }

    #[test]
    fn stationary_acf_examples() {
        let mut p = ou_process(1.0, 1.0);
        p.g = KernelSpec::Gamma { nu: 1.0, lambda: 2.0 };
        assert!((p.acf(1.0).unwrap().0 - (-1f64).exp()).abs() < 1e-12);
        p.g = KernelSpec::Bjerksund { sigma: 3.0, b: 1.0 };
        assert!((p.acf(1.0).unwrap().0 - 2f64.ln()).abs() < 1e-12);
        let c = 2.0;
        let p = ou_process(0.5, c);
        let m = p.moments_stationary().unwrap();
        assert!(!m.estimated);
        assert!((m.var - c * 1.0).abs() < 1e-14);
    }

    #[test]
    fn gig_construction_variance_is_gh_variance() {
        let target = GigParams::new(-0.5, 1.0, 1.0).unwrap();
        let (nu, lam) = (0.8, 1.0);
        let (_, q) = gig_ou_kernels(nu, lam).unwrap();
        let p = LssProcess {
            mu: 0.1,
            g: KernelSpec::Gamma { nu, lambda: lam },
            q: Some(q),
            driver: LevyModel::standard_brownian(),
            vol: VolatilityModel::GigOu { nu, lambda: lam, target },
            skew: 0.3,
        };
        let m = p.moments_stationary().unwrap();
        assert!(!m.estimated);
        // GH with W ~ GIG: Var = E[W] + γ² Var[W], mean μ + γ E[W]
        assert!((m.var - (target.mean() + 0.09 * target.variance())).abs() < 1e-8);
        assert!((m.mean - (0.1 + 0.3 * target.mean())).abs() < 1e-8);
    }

    #[test]
    fn semimartingale_examples() {
        let p = ou_process(1.0, 1.0);
        let s = p.semimartingale_decompose();
        assert!(s.is_semimartingale && s.g0 == Some(1.0));
        let mut q = p.clone();
        q.g = KernelSpec::Gamma { nu: 0.672, lambda: 0.055 };
        assert!(!q.semimartingale_decompose().is_semimartingale);
        q.g = KernelSpec::Bjerksund { sigma: 2.0, b: 4.0 };
        let s = q.semimartingale_decompose();
        assert!(s.is_semimartingale && s.g0 == Some(0.5));
    }

    #[test]
    fn quadratic_variation_of_ou() {
        let c = 2.0;
        let p = ou_process(1.0, c);
        let mut cfg = SimConfig::new(1e-3, 1.0, 1, 3);
        cfg.store_increments = true;
        let out = p.simulate(&cfg).unwrap();
        let d = &out.details.as_ref().unwrap()[0];
        let (a, r) = p.quadratic_variation(&out.paths[0], d).unwrap();
        assert!((a.last().unwrap() - c).abs() < 1e-9);
        assert!((r.last().unwrap() / a.last().unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn quadratic_variation_of_pure_jumps() {
        let mut p = ou_process(1.0, 1.0);
        p.driver = LevyModel::CompoundPoissonNormal { rate: 5.0, jump_mean: 0.5, jump_sd: 0.2 };
        let mut cfg = SimConfig::new(1e-3, 2.0, 1, 4);
        cfg.store_increments = true;
        let out = p.simulate(&cfg).unwrap();
        let d = &out.details.as_ref().unwrap()[0];
        let (a, r) = p.quadratic_variation(&out.paths[0], d).unwrap();
        let jumps: f64 = d.dl.iter().map(|x| x * x).sum();
        assert!((a.last().unwrap() - jumps).abs() < 1e-9 * jumps.max(1.0) || d.dqv.iter().any(|&v| v > 0.0));
        assert!((r.last().unwrap() / a.last().unwrap() - 1.0).abs() < 0.05);
        let mut g = p.clone();
        g.g = KernelSpec::Gamma { nu: 0.672, lambda: 0.055 };
        assert!(matches!(g.quadratic_variation(&out.paths[0], d), Err(LssError::NotSemimartingale(_))));
    }

    #[test]
    fn truncation_control() {
        let p = LssProcess { g: KernelSpec::Gamma { nu: 0.672, lambda: 0.055 }, ..ou_process(1.0, 1.0) };
        let eps = 1e-6;
        let a = p.discrete_weights(1.0, eps).unwrap().variance();
        let w2 = {
            let t = p.g.truncation_window(eps).unwrap();
            let m = (2.0 * t).ceil() as usize;
            let g = p.g.cell_averages(1.0, m).unwrap();
            g.iter().map(|v| v * v).sum::<f64>() + (p.g.integral_sq(0.0, 1.0).unwrap() - g[0] * g[0])
        };
        assert!(((a - w2) / a).abs() < 10.0 * eps);
        assert!(a <= 1.0 + 1e-12);
    }

    #[test]
    fn superposition_rules() {
        let a = ou_process(1.0, 1.0);
        let b = ou_process(5.0, 1.0);
        assert!(superpose(vec![a.clone()], vec![0.9]).is_err());
        let one = superpose(vec![a.clone()], vec![1.0]).unwrap();
        assert_eq!(one.moments_stationary().unwrap(), a.moments_stationary().unwrap());
        let half = superpose(vec![a.clone(), a.clone()], vec![0.5, 0.5]).unwrap();
        assert!((half.moments_stationary().unwrap().var - 0.5 * a.moments_stationary().unwrap().var).abs() < 1e-14);
        let s = superpose(vec![a, b], vec![0.5, 0.5]).unwrap();
        let (va, vb) = (0.25 * 0.5, 0.25 * 0.1);
        let h: f64 = 0.3;
        let want = (va * (-h).exp() + vb * (-5.0 * h).exp()) / (va + vb);
        assert!((s.acf(h).unwrap() - want).abs() < 1e-12);
        // Monte Carlo acf at lag h
        let out = s.simulate(&SimConfig::new(0.1, 0.3, 20_000, 8)).unwrap();
        let x0: Vec<f64> = out.paths.iter().map(|p| p[0]).collect();
        let x3: Vec<f64> = out.paths.iter().map(|p| p[3]).collect();
        let c = x0.iter().zip(&x3).map(|(a, b)| a * b).sum::<f64>() / x0.len() as f64;
        let v = x0.iter().map(|a| a * a).sum::<f64>() / x0.len() as f64;
        assert!((c / v - want).abs() < 0.03, "{} vs {want}", c / v);
    }

    #[test]
    fn tower_property_for_bns() {
        let mut p = ou_process(2.0, 1.0);
        p.vol = VolatilityModel::BnsOu { lambda: 0.5, subordinator: LevyModel::GammaSubordinator { a: 2.0, c: 2.0 } };
        let want = p.moments_stationary().unwrap().var;
        let dt = 0.05;
        let vars: Vec<f64> = (0..1000u64)
            .map(|s| {
                let mut path = p.vol.sample_omega_sq(dt, 200, s).unwrap();
                path.reverse();
                p.moments_conditional(&path, dt, 0.0).unwrap().var
            })
            .collect();
        let (m, se) = mean_se(&vars);
        assert!((m - want).abs() < 4.0 * se, "{m} ± {se} vs {want}");
    }

    #[test]
    fn binary_round_trip() {
        let p = ou_process(1.0, 1.0);
        let out = p.simulate(&SimConfig::new(0.1, 1.0, 3, 5)).unwrap();
        let mut buf = Vec::new();
        out.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LSSP");
        let back = SimOutput::read_binary(&buf[..]).unwrap();
        assert_eq!(back.paths, out.paths);
        assert_eq!(back.times, out.times);
        let mut csv_buf = Vec::new();
        out.write_csv(&mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("t,path_0,path_1,path_2"));
        assert_eq!(text.lines().count(), 12);
    }
}
