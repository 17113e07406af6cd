//! European options on forwards by Fourier inversion with exponential damping.
//!
//! With X = log F_τ(T) and s = α + iy,
//!
//! ```text
//! E[p(X)] = (1/2π) ∫ P(s) E[e^{sX}] dy,   P(s) = ∫ e^{-sx} p(x) dx.
//! ```
//!
//! For a call P(s) = K^{1-s} / (s(s-1)) when α > 1; the put has the same
//! transform when α < 0.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::forward::{ForwardSurface, PricingMode};
use crate::levy::LevyModel;
use crate::quad;
use crate::specfun;
use crate::spot::SpotKind;
use crate::volatility::VolatilityModel;

/// Payoff as a function of the forward price on a log-price window.
#[derive(Clone)]
pub struct CustomPayoff {
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Log-price window [x_lo, x_hi] outside which the damped payoff is negligible.
    pub x_range: (f64, f64),
}

impl fmt::Debug for CustomPayoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomPayoff{:?}", self.x_range)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    #[serde(skip)]
    Custom(CustomPayoff),
}

impl Payoff {
    pub fn value(&self, f: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (f - strike).max(0.0),
            Payoff::Put { strike } => (strike - f).max(0.0),
            Payoff::Custom(c) => (c.f)(f),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionSpec {
    pub payoff: Payoff,
    /// Exercise time τ.
    pub exercise: f64,
    /// Delivery time T ≥ τ of the underlying forward.
    pub maturity: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_alpha")]
    pub damping_alpha: f64,
}

fn default_alpha() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierGrid {
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_ymax")]
    pub y_max: f64,
    /// Target error relative to the forward level.
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_points() -> usize {
    4096
}

fn default_ymax() -> f64 {
    200.0
}

fn default_tol() -> f64 {
    1e-7
}

impl Default for FourierGrid {
    fn default() -> Self {
        FourierGrid { n_points: default_points(), y_max: default_ymax(), tolerance: default_tol() }
    }
}

impl FourierGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.y_max / self.n_points as f64
    }

    fn validate(&self) -> Result<()> {
        if !self.n_points.is_power_of_two() || self.n_points < 16 || !(self.y_max > 0.0) {
            return Err(LssError::InvalidParams(format!(
                "grid needs a power-of-two n_points >= 16 and y_max > 0, got {} and {}",
                self.n_points, self.y_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionPrice {
    pub price: f64,
    pub error_estimate: f64,
}

/// Transform of a payoff: `P(y)` evaluates P(α + iy).
pub type Transform = Box<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// Damped transform P(α + iy) of the payoff in log-price.
pub fn payoff_transform(payoff: &Payoff, alpha: f64) -> Result<Transform> {
    match payoff {
        Payoff::Call { strike } | Payoff::Put { strike } => {
            let is_call = matches!(payoff, Payoff::Call { .. });
            if is_call && !(alpha > 1.0) {
                return Err(LssError::InvalidParams(format!("call damping needs alpha > 1, got {alpha}")));
            }
            if !is_call && !(alpha < 0.0) {
                return Err(LssError::InvalidParams(format!("put damping needs alpha < 0, got {alpha}")));
            }
            if !(*strike > 0.0) {
                return Err(LssError::InvalidParams("strike must be positive".into()));
            }
            let lk = strike.ln();
            Ok(Box::new(move |y: f64| {
                let s = Complex64::new(alpha, y);
                ((1.0 - s) * lk).exp() / (s * (s - 1.0))
            }))
        }
        Payoff::Custom(c) => {
            let (lo, hi) = c.x_range;
            if !(hi > lo) {
                return Err(LssError::InvalidParams("custom payoff range is empty".into()));
            }
            // Simpson weights on an even grid
            let n = 8192;
            let h = (hi - lo) / n as f64;
            let pts: Vec<(f64, f64)> = (0..=n)
                .map(|i| {
                    let x = lo + i as f64 * h;
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    (x, w * h / 3.0 * (c.f)(x.exp()) * (-alpha * x).exp())
                })
                .filter(|(_, v)| *v != 0.0)
                .collect();
            if pts.iter().any(|(_, v)| !v.is_finite()) {
                return Err(LssError::Divergence("damped custom payoff is not finite".into()));
            }
            Ok(Box::new(move |y: f64| {
                pts.iter().map(|&(x, v)| v * Complex64::from_polar(1.0, -y * x)).sum()
            }))
        }
    }
}

/// Law of X = log F_τ(T) given F_t: log E[e^{sX}] =
/// s c0 + ½ s² var + (½ s² B(t) + s E(t)) Z_t + ∫_t^τ λ φ_U^η(½ s² B(v) + s E(v)) dv.
struct LogForwardLaw {
    c0: f64,
    var: f64,
    bns: Option<BnsPart>,
}

struct BnsPart {
    lambda: f64,
    sub: LevyModel,
    z: f64,
    b_t: f64,
    e_t: f64,
    /// (weight, B(v), E(v)) at Gauss–Legendre nodes in v.
    nodes: Vec<(f64, f64, f64)>,
}

impl LogForwardLaw {
    fn new(fs: &ForwardSurface, exercise: f64, maturity: f64) -> Result<Self> {
        let core = &fs.model.core;
        let g = &core.g;
        let t = fs.state.t;
        let (x_lo, x_hi) = (maturity - exercise, maturity - t);
        let b = fs.b();
        let theta = fs.measure.esscher.theta;
        let terms = fs.gaussian_terms(x_lo)?;
        let mut c0 = fs.model.seasonality.log_value(maturity)
            + fs.level()?
            + fs.state.realized(g, x_hi)?
            + terms.drift;
        if theta != 0.0 {
            c0 += b.sqrt() * theta * g.integral(x_lo, x_hi)?;
        }
        match (&core.vol, fs.q_subordinator()) {
            (VolatilityModel::Constant { c }, _) => {
                Ok(LogForwardLaw { c0, var: b * c * g.integral_sq(x_lo, x_hi)?, bns: None })
            }
            (_, Some((lambda, sub))) => {
                let hc = terms.z_coef;
                // B(v) = b ∫_{x_lo}^{T-v} g(x)² e^{-λ(T-v-x)} dx
                let big_b = |v: f64| -> Result<f64> {
                    let top = maturity - v;
                    if top <= x_lo {
                        return Ok(0.0);
                    }
                    let f = |x: f64| g.value(x).powi(2) * (-lambda * (top - x)).exp();
                    let head = if x_lo == 0.0 { g.head_power().map(|p| 2.0 * p) } else { None };
                    Ok(b * quad::integrate_endpoint_singular(f, x_lo, top, head, None, 1e-12)?)
                };
                let e = |v: f64| hc * (-lambda * (exercise - v)).exp();
                let (gx, gw) = quad::gauss_legendre(32);
                let panels = 8;
                let width = (exercise - t) / panels as f64;
                let mut nodes = Vec::with_capacity(panels * gx.len());
                for p in 0..panels {
                    let mid = t + (p as f64 + 0.5) * width;
                    for (z, w) in gx.iter().zip(&gw) {
                        let v = mid + 0.5 * width * z;
                        nodes.push((0.5 * width * w, big_b(v)?, e(v)));
                    }
                }
                let bns = BnsPart { lambda, sub, z: fs.state.vol_sq, b_t: big_b(t)?, e_t: e(t), nodes };
                Ok(LogForwardLaw { c0, var: 0.0, bns: Some(bns) })
            }
            _ => Err(LssError::InvalidParams("option pricing supports constant and BNS volatility".into())),
        }
    }

    fn log_mgf(&self, s: Complex64) -> Result<Complex64> {
        let mut v = s * self.c0 + 0.5 * s * s * self.var;
        if let Some(p) = &self.bns {
            v += (0.5 * s * s * p.b_t + s * p.e_t) * p.z;
            for &(w, bv, ev) in &p.nodes {
                v += w * p.lambda * p.sub.cumulant_complex(0.5 * s * s * bv + s * ev)?;
            }
        }
        Ok(v)
    }

    fn degenerate(&self) -> bool {
        self.var == 0.0 && self.bns.as_ref().is_none_or(|p| p.nodes.iter().all(|n| n.1 == 0.0) && p.b_t == 0.0)
    }
}

/// Price at the surface's current time of the option on F_τ(T).
pub fn price_option(o: &OptionSpec, fs: &ForwardSurface, grid: &FourierGrid) -> Result<OptionPrice> {
    grid.validate()?;
    if fs.model.kind != SpotKind::Geometric || fs.measure.mode != PricingMode::BrownianGirsanov {
        return Err(LssError::InvalidParams(
            "Fourier pricing needs a geometric spot in the Girsanov mode".into(),
        ));
    }
    let t = fs.state.t;
    if !(o.exercise >= t && o.maturity >= o.exercise) {
        return Err(LssError::InvalidParams(format!(
            "need t <= exercise <= maturity, got {t}, {}, {}",
            o.exercise, o.maturity
        )));
    }
    let disc = (-o.rate * (o.exercise - t)).exp();
    let law = LogForwardLaw::new(fs, o.exercise, o.maturity)?;
    let fwd = law.log_mgf(Complex64::new(1.0, 0.0))?.re.exp();
    if law.degenerate() {
        return Ok(OptionPrice { price: disc * o.payoff.value(fwd), error_estimate: 0.0 });
    }
    // puts with positive damping go through parity with the call
    let (payoff, parity) = match (&o.payoff, o.damping_alpha > 0.0) {
        (Payoff::Put { strike }, true) => (Payoff::Call { strike: *strike }, Some(*strike)),
        (p, _) => (p.clone(), None),
    };
    let transform = payoff_transform(&payoff, o.damping_alpha)?;
    let mut g = *grid;
    for _ in 0..6 {
        let (value, resolution, tail) = fourier_integral(&law, &transform, o.damping_alpha, &g)?;
        let mut price = disc * value;
        let error_estimate = disc * (resolution + tail);
        if let Some(k) = parity {
            price -= disc * (fwd - k);
        }
        if error_estimate <= g.tolerance * fwd {
            return Ok(OptionPrice { price, error_estimate });
        }
        // refine the spacing, or widen the window when the tail dominates
        g.n_points *= 2;
        if tail > resolution {
            g.y_max *= 2.0;
        }
    }
    Err(LssError::Convergence(format!(
        "Fourier grid did not reach tolerance {} up to y_max = {}",
        grid.tolerance,
        g.y_max
    )))
}

/// (1/π) ∫_0^{y_max} Re[P(α+iy) E e^{(α+iy)X}] dy by the trapezoid rule,
/// with |fine - coarse| and a tail bound as error terms.
fn fourier_integral(law: &LogForwardLaw, p: &Transform, alpha: f64, g: &FourierGrid) -> Result<(f64, f64, f64)> {
    let half = g.n_points / 2;
    let dy = g.spacing();
    let vals: Vec<Result<f64>> = (0..=half)
        .into_par_iter()
        .map(|k| {
            let y = k as f64 * dy;
            let m = law.log_mgf(Complex64::new(alpha, y))?.exp();
            Ok((p(y) * m).re)
        })
        .collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let trap = |step: usize| {
        let h = dy * step as f64;
        let n = half / step;
        let inner: f64 = (1..n).map(|k| vals[k * step]).sum();
        h * (0.5 * vals[0] + inner + 0.5 * vals[half])
    };
    let fine = trap(1);
    let coarse = trap(2);
    let tail = vals[half].abs().max(vals[half - 1].abs()) * g.y_max;
    let pi = std::f64::consts::PI;
    Ok((fine / pi, (fine - coarse).abs() / pi, tail / pi))
}

/// Black-76 price with total variance `var` of log F.
pub fn black76(forward: f64, strike: f64, var: f64, discount: f64, call: bool) -> f64 {
    if var <= 0.0 {
        let v = if call { forward - strike } else { strike - forward };
        return discount * v.max(0.0);
    }
    let sd = var.sqrt();
    let d1 = ((forward / strike).ln() + 0.5 * var) / sd;
    let d2 = d1 - sd;
    if call {
        discount * (forward * specfun::normal_cdf(d1) - strike * specfun::normal_cdf(d2))
    } else {
        discount * (strike * specfun::normal_cdf(-d2) - forward * specfun::normal_cdf(-d1))
    }
}
