//! Forward prices F_t(T) = E_Q[S_T | F_t] under Esscher and Girsanov
//! pricing measures.
//!
//! Write τ = T - t and x = T - s for the time to maturity of a past or
//! future instant s. The realised part of the forward is
//! M_t(T) = ∫_{-∞}^t g(T-s) ω_{s-} dL_s, kept as a cell history.

use std::cell::Cell;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::kernels::KernelSpec;
use crate::levy::{EsscherParams, LevyModel};
use crate::lss::LssProcess;
use crate::quad;
use crate::rng;
use crate::spot::{SpotKind, SpotModel};
use crate::volatility::VolatilityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMode {
    /// Esscher tilt θ of the driver, η of the volatility subordinator.
    GeneralEsscher,
    /// Brownian driver with ω dB = ω dW + θ ds; η tilts the subordinator.
    BrownianGirsanov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingMeasure {
    #[serde(default)]
    pub esscher: EsscherParams,
    pub mode: PricingMode,
}

/// Information at time t: driver history and the current volatility state.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub t: f64,
    pub dt: f64,
    /// `history[j]` is ∫ ω dL over [t-(j+1)dt, t-j dt).
    pub history: Vec<f64>,
    /// ω²_t; the BNS factor Z_t.
    pub vol_sq: f64,
}

impl ForwardState {
    /// Draws the history from the stationary law under P.
    pub fn sample(core: &LssProcess, t: f64, dt: f64, truncation_eps: f64, seed: u64) -> Result<Self> {
        core.validate()?;
        let m = ((core.g.truncation_window(truncation_eps)? / dt).ceil() as usize).max(1);
        let vol = core.vol.sample_vol_path(dt, m + 1, rng::derive_seed(seed, 1))?;
        let mut r = rng::stream(seed, 2);
        let mut history: Vec<f64> = vol[..m].iter().map(|v| v.sqrt() * core.driver.sample(&mut r, dt)).collect();
        history.reverse();
        Ok(ForwardState { t, dt, history, vol_sq: vol[m] })
    }

    /// ∫_{-∞}^t g(τ + t - s) ω dL with cell-averaged weights.
    pub fn realized(&self, g: &KernelSpec, tau: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (j, x) in self.history.iter().enumerate() {
            let a = tau + j as f64 * self.dt;
            acc += g.integral(a, a + self.dt)? / self.dt * x;
        }
        Ok(acc)
    }
}

/// Deterministic parts of log F_t(T) in the Gaussian mode:
/// log F = log Λ(T) + level + M_t(T) + drift + z_coef·Z_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianTerms {
    pub drift: f64,
    pub z_coef: f64,
}

/// Affine structure of a kernel: G(t,s) = g1(t) g2(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Affinity {
    pub affine: bool,
    /// k with g(x) = c e^{-k x}, so g1(t) = c e^{-k t} and g2(s) = e^{k s}.
    pub rate: Option<f64>,
    pub scale: Option<f64>,
}

/// Parameters of dF/F over one short step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForwardStep {
    /// √b g(T-t) ω_t.
    pub diffusion: f64,
    /// H with jump transform z ↦ exp(H z) - 1.
    pub jump_coef: f64,
    /// λ φ_U^η(H) dt, the compensator of the jump part.
    pub compensator: f64,
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Simulated F_{t_k}(T) under Q.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPaths {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardSurface {
    pub model: SpotModel,
    pub measure: PricingMeasure,
    pub state: ForwardState,
}

/// Default Monte Carlo size for conditional expectations over future volatility.
pub const DEFAULT_N_MC: usize = 10_000;
const MC_CELLS: usize = 200;

impl ForwardSurface {
    pub fn new(model: SpotModel, measure: PricingMeasure, state: ForwardState) -> Result<Self> {
        model.validate()?;
        let core = &model.core;
        match core.vol {
            VolatilityModel::Constant { .. } | VolatilityModel::BnsOu { .. } => {}
            _ => {
                return Err(LssError::InvalidParams(
                    "forward pricing supports constant and BNS volatility".into(),
                ))
            }
        }
        if core.skew != 0.0 && !core.vol.is_constant() {
            return Err(LssError::InvalidParams("a drift term needs constant volatility for forward pricing".into()));
        }
        if let VolatilityModel::BnsOu { subordinator, .. } = &core.vol {
            let (lo, hi) = subordinator.strip();
            let eta = measure.esscher.eta;
            if !(eta > lo && eta < hi) {
                return Err(LssError::Strip { x: eta, lo, hi });
            }
            if !(state.vol_sq > 0.0) {
                return Err(LssError::Measure("the volatility state must be positive".into()));
            }
        }
        match measure.mode {
            PricingMode::BrownianGirsanov => match core.driver {
                LevyModel::Brownian { drift: 0.0, .. } => {}
                _ => {
                    return Err(LssError::Measure(
                        "the Girsanov mode needs a centred Brownian driver (put the level in mu)".into(),
                    ))
                }
            },
            PricingMode::GeneralEsscher => {
                core.driver.esscher_triplet(measure.esscher.theta)?;
            }
        }
        if !(state.dt > 0.0) {
            return Err(LssError::InvalidParams("state grid step must be positive".into()));
        }
        Ok(ForwardSurface { model, measure, state })
    }

    fn core(&self) -> &LssProcess {
        &self.model.core
    }

    pub(crate) fn b(&self) -> f64 {
        self.core().driver.gaussian_variance()
    }

    /// μ plus the deterministic drift term under constant volatility.
    pub fn level(&self) -> Result<f64> {
        let c = self.core();
        let mut v = c.mu;
        if c.skew != 0.0 {
            if let (VolatilityModel::Constant { c: var }, Some(q)) = (&c.vol, &c.q) {
                v += c.skew * var * q.mass()?;
            }
        }
        Ok(v)
    }

    /// Q-law of the volatility subordinator and its rate.
    pub(crate) fn q_subordinator(&self) -> Option<(f64, LevyModel)> {
        match &self.core().vol {
            VolatilityModel::BnsOu { lambda, subordinator } => {
                Some((*lambda, subordinator.esscher_triplet(self.measure.esscher.eta).ok()?))
            }
            _ => None,
        }
    }

    /// Y_t.
    pub fn core_value(&self) -> Result<f64> {
        Ok(self.level()? + self.state.realized(&self.core().g, 0.0)?)
    }

    /// S_t.
    pub fn spot(&self) -> Result<f64> {
        let y = self.core_value()?;
        let lam = self.model.seasonality.value(self.state.t);
        Ok(match self.model.kind {
            SpotKind::Geometric => lam * y.exp(),
            SpotKind::Arithmetic => lam + y,
        })
    }

    fn check_maturity(&self, maturity: f64) -> Result<f64> {
        let tau = maturity - self.state.t;
        if !(tau >= 0.0) {
            return Err(LssError::InvalidParams(format!("maturity {maturity} precedes t = {}", self.state.t)));
        }
        Ok(tau)
    }

    /// F_t(T) by the formula matching the spot kind and pricing mode.
    pub fn forward(&self, maturity: f64) -> Result<f64> {
        match (self.model.kind, self.measure.mode) {
            (SpotKind::Geometric, PricingMode::BrownianGirsanov) => self.forward_geometric_gaussian(maturity),
            (SpotKind::Geometric, PricingMode::GeneralEsscher) => {
                Ok(self.forward_geometric_esscher(maturity, DEFAULT_N_MC, 0)?.value)
            }
            (SpotKind::Arithmetic, _) => Ok(self.forward_arithmetic(maturity, DEFAULT_N_MC, 0)?.value),
        }
    }

    /// H̃(u) = ½ b ∫_0^u g(x)² e^{-λ(u-x)} dx.
    fn h_tilde(&self, lambda: f64, u: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        let g = &self.core().g;
        let f = |x: f64| g.value(x).powi(2) * (-lambda * (u - x)).exp();
        let v = match g.head_power() {
            None => quad::gl128_doubling(f, 0.0, u, 1e-10)?,
            Some(p) => quad::integrate_endpoint_singular(f, 0.0, u, Some(2.0 * p), None, 1e-12)?,
        };
        Ok(0.5 * self.b() * v)
    }

    /// Deterministic terms of the Gaussian-mode log forward at time t for maturity t + τ.
    pub fn gaussian_terms(&self, tau: f64) -> Result<GaussianTerms> {
        let core = self.core();
        let g = &core.g;
        let b = self.b();
        let mut drift = if self.measure.esscher.theta != 0.0 && tau > 0.0 {
            b.sqrt() * self.measure.esscher.theta * g.integral(0.0, tau)?
        } else {
            0.0
        };
        let z_coef = match (&core.vol, self.q_subordinator()) {
            (VolatilityModel::Constant { c }, _) => {
                if tau > 0.0 {
                    drift += 0.5 * b * c * g.integral_sq(0.0, tau)?;
                }
                0.0
            }
            (_, Some((lambda, sub))) => {
                let failure: Cell<Option<LssError>> = Cell::new(None);
                let integrand = |u: f64| match self.h_tilde(lambda, u).and_then(|h| sub.cumulant(h)) {
                    Ok(v) => lambda * v,
                    Err(e) => {
                        failure.set(Some(e));
                        0.0
                    }
                };
                if tau > 0.0 {
                    let head = g.head_power().map(|p| 2.0 * p + 1.0);
                    drift += quad::integrate_endpoint_singular(integrand, 0.0, tau, head, None, 1e-11)?;
                }
                if let Some(e) = failure.take() {
                    return Err(e);
                }
                self.h_tilde(lambda, tau)?
            }
            _ => unreachable!("checked in new"),
        };
        Ok(GaussianTerms { drift, z_coef })
    }

    /// Girsanov mode, geometric spot:
    /// log F = log Λ(T) + μ + M_t(T) + √b θ∫_0^τ g + Z_t H̃(τ) + ∫_0^τ λφ_U^η(H̃(u)) du,
    /// with H̃ replaced by ½ b c ∫_0^τ g² under constant volatility.
    pub fn forward_geometric_gaussian(&self, maturity: f64) -> Result<f64> {
        self.require(SpotKind::Geometric, PricingMode::BrownianGirsanov)?;
        let tau = self.check_maturity(maturity)?;
        let m = self.state.realized(&self.core().g, tau)?;
        let k = self.gaussian_terms(tau)?;
        Ok((self.model.seasonality.log_value(maturity) + self.level()? + m + k.drift + k.z_coef * self.state.vol_sq).exp())
    }

    /// The affine form: M_t(T) = g1(T)/g1(t)·(Y_t - level). Fails for non-affine kernels.
    pub fn forward_factorized(&self, maturity: f64) -> Result<f64> {
        self.require(SpotKind::Geometric, PricingMode::BrownianGirsanov)?;
        let a = affinity_check(&self.core().g);
        let rate = a.rate.filter(|_| a.affine).ok_or_else(|| {
            LssError::InvalidParams("kernel has no affine factorisation".into())
        })?;
        let tau = self.check_maturity(maturity)?;
        let y = self.core_value()?;
        let level = self.level()?;
        let k = self.gaussian_terms(tau)?;
        let m = (-rate * tau).exp() * (y - level);
        Ok((self.model.seasonality.log_value(maturity) + level + m + k.drift + k.z_coef * self.state.vol_sq).exp())
    }

    pub(crate) fn require(&self, kind: SpotKind, mode: PricingMode) -> Result<()> {
        if self.model.kind != kind || self.measure.mode != mode {
            return Err(LssError::InvalidParams(format!(
                "this formula needs a {kind:?} spot in {mode:?} mode"
            )));
        }
        Ok(())
    }

    /// ∫_0^τ φ_L^θ(g(x) √c) dx.
    fn esscher_constant_term(&self, c: f64, tau: f64) -> Result<f64> {
        if tau == 0.0 {
            return Ok(0.0);
        }
        let core = self.core();
        let theta = self.measure.esscher.theta;
        let (lo, hi) = core.driver.strip();
        if core.g.head_power().is_some() && (lo.is_finite() || hi.is_finite()) {
            return Err(LssError::Strip { x: f64::INFINITY, lo, hi });
        }
        let failure: Cell<Option<LssError>> = Cell::new(None);
        let f = |x: f64| match core.driver.esscher_cumulant(theta, core.g.value(x) * c.sqrt()) {
            Ok(v) => v,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        };
        let head = core.g.head_power().map(|p| 2.0 * p);
        let v = quad::integrate_endpoint_singular(f, 0.0, tau, head, None, 1e-12)?;
        match failure.take() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// Esscher mode, geometric spot:
    /// F = Λ(T) exp(μ + M_t(T)) E_η[exp(∫_t^T φ_L^θ(g(T-s) ω_s) ds) | F_t].
    /// Exact under constant volatility, otherwise Monte Carlo over `n_mc`
    /// volatility paths.
    pub fn forward_geometric_esscher(&self, maturity: f64, n_mc: usize, seed: u64) -> Result<McEstimate> {
        self.require(SpotKind::Geometric, PricingMode::GeneralEsscher)?;
        let tau = self.check_maturity(maturity)?;
        let core = self.core();
        let base = self.model.seasonality.log_value(maturity) + self.level()? + self.state.realized(&core.g, tau)?;
        if let VolatilityModel::Constant { c } = core.vol {
            return Ok(McEstimate { value: (base + self.esscher_constant_term(c, tau)?).exp(), std_error: 0.0 });
        }
        if tau == 0.0 {
            return Ok(McEstimate { value: base.exp(), std_error: 0.0 });
        }
        let theta = self.measure.esscher.theta;
        let cells = self.future_cells(tau)?;
        let gl = quad::gauss_legendre(8);
        let brownian = matches!(core.driver, LevyModel::Brownian { .. });
        let q_driver = core.driver.esscher_triplet(theta)?;
        let (k1, b) = (q_driver.kappa1(), q_driver.gaussian_variance());
        // per cell: kernel values at the Gauss nodes
        let nodes: Vec<Vec<(f64, f64)>> = cells
            .spans
            .iter()
            .map(|&(lo, hi)| {
                gl.0.iter()
                    .zip(&gl.1)
                    .map(|(z, w)| (core.g.value(0.5 * (lo + hi) + 0.5 * (hi - lo) * z), 0.5 * (hi - lo) * w))
                    .collect()
            })
            .collect();
        let draws: Vec<Result<f64>> = (0..n_mc)
            .into_par_iter()
            .map(|p| {
                let omega = self.future_vol_cells(&cells, rng::derive_seed(seed, p as u64))?;
                let mut acc = 0.0;
                for (k, &o2) in omega.iter().enumerate() {
                    let om = o2.sqrt();
                    if brownian {
                        acc += k1 * om * cells.g_int[k] + 0.5 * b * o2 * cells.g2_int[k];
                    } else {
                        for &(gv, w) in &nodes[k] {
                            acc += w * core.driver.esscher_cumulant(theta, gv * om)?;
                        }
                    }
                }
                Ok(acc.exp())
            })
            .collect();
        let draws: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
        let est = mean_se(&draws);
        Ok(McEstimate { value: base.exp() * est.value, std_error: base.exp() * est.std_error })
    }

    /// Arithmetic spot:
    /// F = Λ(T) + μ + M_t(T) + E_θ[L_1] ∫_t^T g(T-s) E_η[ω_s | F_t] ds,
    /// and Λ(T) + μ + M_t(T) + √b θ ∫_0^τ g in the Girsanov mode.
    pub fn forward_arithmetic(&self, maturity: f64, n_mc: usize, seed: u64) -> Result<McEstimate> {
        if self.model.kind != SpotKind::Arithmetic {
            return Err(LssError::InvalidParams("forward_arithmetic needs an arithmetic spot".into()));
        }
        let tau = self.check_maturity(maturity)?;
        let core = self.core();
        let base = self.model.seasonality.value(maturity) + self.level()? + self.state.realized(&core.g, tau)?;
        if tau == 0.0 {
            return Ok(McEstimate { value: base, std_error: 0.0 });
        }
        let theta = self.measure.esscher.theta;
        if self.measure.mode == PricingMode::BrownianGirsanov {
            let d = self.b().sqrt() * theta * core.g.integral(0.0, tau)?;
            return Ok(McEstimate { value: base + d, std_error: 0.0 });
        }
        let k1 = core.driver.esscher_triplet(theta)?.kappa1();
        if k1 == 0.0 {
            return Ok(McEstimate { value: base, std_error: 0.0 });
        }
        if let VolatilityModel::Constant { c } = core.vol {
            return Ok(McEstimate { value: base + k1 * c.sqrt() * core.g.integral(0.0, tau)?, std_error: 0.0 });
        }
        let cells = self.future_cells(tau)?;
        let draws: Vec<Result<f64>> = (0..n_mc)
            .into_par_iter()
            .map(|p| {
                let omega = self.future_vol_cells(&cells, rng::derive_seed(seed, p as u64))?;
                Ok(omega.iter().zip(&cells.g_int).map(|(o2, gi)| o2.sqrt() * gi).sum::<f64>())
            })
            .collect();
        let draws: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
        let est = mean_se(&draws);
        Ok(McEstimate { value: base + k1 * est.value, std_error: k1.abs() * est.std_error })
    }

    /// Instantaneous volatility √b g(T-t) ω_t of dF/F.
    pub fn forward_vol(&self, maturity: f64) -> Result<f64> {
        let tau = self.check_maturity(maturity)?;
        Ok(forward_vol_term_structure(&self.core().g, self.b(), self.state.vol_sq, tau))
    }

    /// Rows (T, F_t(T), σ_F(t,T)).
    pub fn forward_curve(&self, maturities: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        maturities
            .iter()
            .map(|&m| Ok((m, self.forward(m)?, self.forward_vol(m).unwrap_or(f64::NAN))))
            .collect()
    }

    /// Coefficients of dF_t(T)/F_{t-}(T) = √b g(T-t) ω_{t-} dW_t + ∫(e^{H z} - 1) Ñ_U(dz, dt)
    /// over a step of length `dt`.
    pub fn risk_neutral_forward_step(&self, maturity: f64, dt: f64) -> Result<ForwardStep> {
        self.require(SpotKind::Geometric, PricingMode::BrownianGirsanov)?;
        let tau = self.check_maturity(maturity)?;
        let diffusion = forward_vol_term_structure(&self.core().g, self.b(), self.state.vol_sq, tau);
        match self.q_subordinator() {
            Some((lambda, sub)) => {
                let h = self.h_tilde(lambda, tau)?;
                Ok(ForwardStep { diffusion, jump_coef: h, compensator: lambda * sub.cumulant(h)? * dt })
            }
            None => Ok(ForwardStep { diffusion, jump_coef: 0.0, compensator: 0.0 }),
        }
    }

    /// Samples F_{t+dt}(T)/F_t(T) from the step of
    /// [`risk_neutral_forward_step`](Self::risk_neutral_forward_step).
    pub fn sample_step_ratio<R: Rng + ?Sized>(&self, step: &ForwardStep, dt: f64, r: &mut R) -> f64 {
        let z: f64 = r.sample(StandardNormal);
        let mut log = step.diffusion * dt.sqrt() * z - 0.5 * step.diffusion.powi(2) * dt;
        if let Some((lambda, sub)) = self.q_subordinator() {
            log += step.jump_coef * sub.sample(r, lambda * dt) - step.compensator;
        }
        log.exp()
    }

    /// Cells on [t, t+τ] for the conditional expectations over future volatility.
    fn future_cells(&self, tau: f64) -> Result<FutureCells> {
        let g = &self.core().g;
        let n = MC_CELLS;
        let h = tau / n as f64;
        let mut spans = Vec::with_capacity(n);
        let mut g_int = Vec::with_capacity(n);
        let mut g2_int = Vec::with_capacity(n);
        for k in 0..n {
            // cell k covers s in [t + k h, t + (k+1) h], i.e. x = T - s in [τ - (k+1)h, τ - k h]
            let (lo, hi) = ((tau - (k + 1) as f64 * h).max(0.0), tau - k as f64 * h);
            spans.push((lo, hi));
            g_int.push(g.integral(lo, hi)?);
            g2_int.push(g.integral_sq(lo, hi)?);
        }
        Ok(FutureCells { h, spans, g_int, g2_int })
    }

    /// Cell averages of ω² on the future cells under Q^η.
    fn future_vol_cells(&self, cells: &FutureCells, seed: u64) -> Result<Vec<f64>> {
        let n = cells.spans.len();
        match (&self.core().vol, self.q_subordinator()) {
            (VolatilityModel::Constant { c }, _) => Ok(vec![*c; n]),
            (_, Some((lambda, sub))) => {
                let mut r = rng::stream(seed, 0);
                let bns = BnsStep::new(lambda, cells.h);
                let mut z = self.state.vol_sq;
                Ok((0..n)
                    .map(|_| {
                        let du = sub.sample(&mut r, lambda * cells.h);
                        let (next, avg) = bns.advance(z, du);
                        z = next;
                        avg
                    })
                    .collect())
            }
            _ => unreachable!("checked in new"),
        }
    }

    /// Simulates t ↦ F_t(T) under Q on `n_steps` equal steps from the current
    /// time to `until` (≤ T), each split into `substeps` integration cells.
    /// Volatility-dependent conditional expectations are not re-estimated, so
    /// the Esscher mode and arithmetic Esscher forwards need constant volatility.
    pub fn simulate_forward(
        &self,
        maturity: f64,
        until: f64,
        n_steps: usize,
        substeps: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<ForwardPaths> {
        let tau0 = self.check_maturity(maturity)?;
        let t0 = self.state.t;
        if !(until >= t0 && until <= maturity) || n_steps == 0 || substeps == 0 {
            return Err(LssError::InvalidParams("need t <= until <= T and positive step counts".into()));
        }
        let core = self.core();
        let girsanov = self.measure.mode == PricingMode::BrownianGirsanov;
        if !girsanov && !core.vol.is_constant() {
            return Err(LssError::InvalidParams("Esscher-mode forward paths need constant volatility".into()));
        }
        let theta = self.measure.esscher.theta;
        let q_driver = if girsanov { None } else { Some(core.driver.esscher_triplet(theta)?) };
        let b = self.b();
        let g = &core.g;
        let n_cells = n_steps * substeps;
        let h = (until - t0) / n_cells as f64;
        let times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h * substeps as f64).collect();
        // per-cell kernel integrals over x = T - s
        let mut g_int = Vec::with_capacity(n_cells);
        let mut g2_int = Vec::with_capacity(n_cells);
        let mut g_mid = Vec::with_capacity(n_cells);
        for k in 0..n_cells {
            let hi = tau0 - k as f64 * h;
            let lo = (hi - h).max(0.0);
            g_int.push(g.integral(lo, hi)?);
            g2_int.push(g.integral_sq(lo, hi)?);
            g_mid.push(g.value(0.5 * (lo + hi)));
        }
        // value of F as a function of (M, Z) at each recorded time
        let log_lambda = self.model.seasonality.log_value(maturity);
        let lambda_t = self.model.seasonality.value(maturity);
        let level = self.level()?;
        let mut det = Vec::with_capacity(times.len());
        let mut zc = Vec::with_capacity(times.len());
        for &t in &times {
            let tau = (maturity - t).max(0.0);
            let (d, z) = match (self.model.kind, self.measure.mode) {
                (SpotKind::Geometric, PricingMode::BrownianGirsanov) => {
                    let k = self.gaussian_terms(tau)?;
                    (k.drift, k.z_coef)
                }
                (SpotKind::Geometric, PricingMode::GeneralEsscher) => {
                    let VolatilityModel::Constant { c } = core.vol else { unreachable!() };
                    (self.esscher_constant_term(c, tau)?, 0.0)
                }
                (SpotKind::Arithmetic, PricingMode::BrownianGirsanov) => {
                    (b.sqrt() * theta * g.integral(0.0, tau)?, 0.0)
                }
                (SpotKind::Arithmetic, PricingMode::GeneralEsscher) => {
                    let VolatilityModel::Constant { c } = core.vol else { unreachable!() };
                    (q_driver.as_ref().map_or(0.0, |d| d.kappa1()) * c.sqrt() * g.integral(0.0, tau)?, 0.0)
                }
            };
            det.push(d);
            zc.push(z);
        }
        let kind = self.model.kind;
        let value = |j: usize, m: f64, z: f64| match kind {
            SpotKind::Geometric => (log_lambda + level + m + det[j] + zc[j] * z).exp(),
            SpotKind::Arithmetic => lambda_t + level + m + det[j],
        };
        let m0 = self.state.realized(g, tau0)?;
        let sub = self.q_subordinator();
        let bns = sub.as_ref().map(|(l, _)| BnsStep::new(*l, h));
        let constant = match core.vol {
            VolatilityModel::Constant { c } => Some(c),
            _ => None,
        };
        let values: Vec<Vec<f64>> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut r = rng::stream(rng::derive_seed(seed, p as u64), 0);
                let (mut m, mut z) = (m0, self.state.vol_sq);
                let mut out = Vec::with_capacity(n_steps + 1);
                out.push(value(0, m, z));
                for k in 0..n_cells {
                    let avg = match (constant, &sub, &bns) {
                        (Some(c), _, _) => c,
                        (None, Some((l, s)), Some(step)) => {
                            let (next, avg) = step.advance(z, s.sample(&mut r, l * h));
                            z = next;
                            avg
                        }
                        _ => unreachable!(),
                    };
                    m += match &q_driver {
                        None => {
                            let n: f64 = r.sample(StandardNormal);
                            b.sqrt() * (theta * g_int[k] + (avg * g2_int[k]).sqrt() * n)
                        }
                        Some(d) => g_mid[k] * avg.sqrt() * d.sample(&mut r, h),
                    };
                    if (k + 1) % substeps == 0 {
                        out.push(value((k + 1) / substeps, m, z));
                    }
                }
                out
            })
            .collect();
        Ok(ForwardPaths { times, values })
    }
}

struct FutureCells {
    h: f64,
    spans: Vec<(f64, f64)>,
    g_int: Vec<f64>,
    g2_int: Vec<f64>,
}

/// One step of the BNS factor with the increment spread uniformly over the
/// step: exact mean for the end value and for the cell average.
struct BnsStep {
    decay: f64,
    w_end: f64,
    a_start: f64,
    a_jump: f64,
}

impl BnsStep {
    fn new(lambda: f64, h: f64) -> Self {
        let decay = (-lambda * h).exp();
        let w_end = -(-lambda * h).exp_m1() / (lambda * h);
        BnsStep { decay, w_end, a_start: w_end, a_jump: (1.0 - w_end) / (lambda * h) }
    }

    /// (Z at the end of the step, average of Z over the step).
    fn advance(&self, z: f64, du: f64) -> (f64, f64) {
        (self.decay * z + self.w_end * du, self.a_start * z + self.a_jump * du)
    }
}

fn mean_se(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    McEstimate { value: m, std_error: (v / n).sqrt() }
}

/// Affinity of a kernel: separable kernels are affine by construction; a
/// stationary kernel is affine exactly when it is exponential, checked by
/// g(x+h)/g(x) being constant at three probe points.
pub fn affinity_check(k: &KernelSpec) -> Affinity {
    if k.is_separable() {
        return Affinity { affine: true, rate: None, scale: None };
    }
    let m = k.memory_scale();
    let h = 0.7 * m;
    let ratios: Vec<f64> = [0.1, 0.5, 1.3].iter().map(|&x| k.value(x * m + h) / k.value(x * m)).collect();
    let affine = ratios.iter().all(|r| r.is_finite() && *r > 0.0 && (r / ratios[0] - 1.0).abs() < 1e-9);
    if !affine {
        return Affinity { affine: false, rate: None, scale: None };
    }
    let rate = -ratios[0].ln() / h;
    let scale = k.value(m) * (rate * m).exp();
    Affinity { affine: true, rate: Some(rate), scale: Some(scale) }
}

/// σ_F(t,T) = √b g(T-t) ω_t with τ = T - t.
pub fn forward_vol_term_structure(g: &KernelSpec, b: f64, vol_sq: f64, tau: f64) -> f64 {
    b.sqrt() * g.value(tau) * vol_sq.sqrt()
}

/// Corr(M_t(T), Y_t) = ∫_0^∞ g(x+τ) g(x) dx / √(∫_τ^∞ g² ∫_0^∞ g²) with τ = T - t.
pub fn forward_spot_correlation(k: &KernelSpec, t: f64, maturity: f64) -> Result<f64> {
    let tau = maturity - t;
    if tau < 0.0 {
        return Err(LssError::InvalidParams("maturity before t".into()));
    }
    if tau == 0.0 {
        return Ok(1.0);
    }
    Ok(k.overlap(tau)? / (k.tail_sq(tau)? * k.l2_norm_sq()?).sqrt())
}
