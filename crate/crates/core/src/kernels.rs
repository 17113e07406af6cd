//! Memory kernels g (stationary, g(t-s)) and G(t,s) (separable wrapper).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::quad;
use crate::specfun;

/// Function handle used by [`Separable`].
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// G(t,s) = g1(t) g2(s).
#[derive(Clone)]
pub struct Separable {
    pub g1: ScalarFn,
    pub g2: ScalarFn,
    pub label: String,
}

impl fmt::Debug for Separable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Separable({})", self.label)
    }
}

/// A memory kernel.
///
/// JSON form: `{"family":"gamma","nu":0.672,"lambda":0.055}`; CARMA kernels
/// take the autoregressive coefficients `a = [a_1..a_p]` and moving-average
/// coefficients `b = [b_0..b_q]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Ou { alpha: f64 },
    Gamma { nu: f64, lambda: f64 },
    Carma { a: Vec<f64>, b: Vec<f64> },
    Bjerksund { sigma: f64, b: f64 },
    /// `weight` times the Gamma(shape, rate) density; the drift and volatility
    /// kernels of the GIG-marginal construction have this form.
    GammaDensity { shape: f64, rate: f64, weight: f64 },
    #[serde(skip)]
    Separable(Separable),
}

/// Regularity flags of a kernel near the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelRegularity {
    /// `None` when g(0+) is infinite.
    pub g_at_zero: Option<f64>,
    pub derivative_sq_integrable: bool,
    pub l2_integrable: bool,
}

const QTOL: f64 = 1e-13;

impl KernelSpec {
    /// Checks the family invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LssError::InvalidParams(m));
        match self {
            KernelSpec::Ou { alpha } if !(*alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("ou kernel needs alpha > 0, got {alpha}"))
            }
            KernelSpec::Gamma { nu, lambda } if !(*nu > 0.5 && *lambda > 0.0) => bad(format!(
                "gamma kernel needs nu > 1/2 and lambda > 0, got nu={nu}, lambda={lambda}"
            )),
            KernelSpec::Bjerksund { sigma, b } if !(*sigma > 0.0 && *b > 0.0) => {
                bad(format!("bjerksund kernel needs sigma > 0 and b > 0, got {sigma}, {b}"))
            }
            KernelSpec::GammaDensity { shape, rate, weight }
                if !(*shape > 0.0 && *rate > 0.0 && weight.is_finite()) =>
            {
                bad(format!("gamma density kernel needs shape, rate > 0, got {shape}, {rate}"))
            }
            KernelSpec::Carma { a, b } => {
                let p = a.len();
                if p == 0 || b.is_empty() || b.len() > p {
                    return bad(format!("carma needs 1 <= q+1 <= p, got p={p}, q+1={}", b.len()));
                }
                if (b[b.len() - 1] - 1.0).abs() > 0.0 {
                    return bad("carma needs the leading moving-average coefficient b_q = 1".into());
                }
                let m = companion(a);
                let eig = m.complex_eigenvalues();
                if let Some(e) = eig.iter().find(|e| e.re >= 0.0) {
                    return bad(format!("carma eigenvalue {e} has nonnegative real part"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Builds a CARMA kernel, rejecting non-stationary coefficients.
    pub fn carma(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let k = KernelSpec::Carma { a, b };
        k.validate()?;
        Ok(k)
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, KernelSpec::Separable(_))
    }

    fn stationary(&self) -> Result<()> {
        if self.is_separable() {
            Err(LssError::InvalidParams("separable kernel has no one-argument form g(x)".into()))
        } else {
            Ok(())
        }
    }

    /// g(x) for x >= 0.
    pub fn eval(&self, x: f64) -> Result<f64> {
        self.stationary()?;
        if x < 0.0 || x.is_nan() {
            return Err(LssError::Domain(format!("kernel argument must be >= 0, got {x}")));
        }
        let v = self.value(x);
        if v.is_infinite() {
            return Err(LssError::Singular);
        }
        Ok(v)
    }

    /// g(x) without checks; +inf at a singular origin, 0 for x < 0.
    pub fn value(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            KernelSpec::Ou { alpha } => (-alpha * x).exp(),
            KernelSpec::Gamma { nu, lambda } => {
                if x == 0.0 {
                    return if *nu < 1.0 {
                        f64::INFINITY
                    } else if *nu == 1.0 {
                        lambda.sqrt()
                    } else {
                        0.0
                    };
                }
                let ln = (nu - 0.5) * lambda.ln() - 0.5 * specfun::ln_gamma_unchecked(2.0 * nu - 1.0)
                    + (nu - 1.0) * x.ln()
                    - 0.5 * lambda * x;
                ln.exp()
            }
            KernelSpec::Carma { a, b } => carma_value(a, b, x),
            KernelSpec::Bjerksund { sigma, b } => sigma / (x + b),
            KernelSpec::GammaDensity { shape, rate, weight } => {
                weight * specfun::gamma_density_unchecked(x, *shape, *rate)
            }
            KernelSpec::Separable(_) => f64::NAN,
        }
    }

    /// G(t, s); zero for s > t.
    pub fn eval2(&self, t: f64, s: f64) -> f64 {
        if s > t {
            return 0.0;
        }
        match self {
            KernelSpec::Separable(k) => (k.g1)(t) * (k.g2)(s),
            _ => self.value(t - s),
        }
    }

    /// g'(x) for x > 0.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.stationary()?;
        if x < 0.0 {
            return Err(LssError::Domain(format!("kernel argument must be >= 0, got {x}")));
        }
        Ok(match self {
            KernelSpec::Ou { alpha } => -alpha * (-alpha * x).exp(),
            KernelSpec::Gamma { nu, lambda } => {
                if x == 0.0 && *nu != 1.0 && *nu < 2.0 {
                    return Err(LssError::Singular);
                }
                self.value(x) * ((nu - 1.0) / x.max(f64::MIN_POSITIVE) * (x > 0.0) as u8 as f64
                    - 0.5 * lambda)
            }
            KernelSpec::Carma { a, b } => {
                let m = companion(a);
                let e = (m.clone() * x).exp();
                let bv = padded_b(b, a.len());
                (bv.transpose() * m * e.column(a.len() - 1))[(0, 0)]
            }
            KernelSpec::Bjerksund { sigma, b } => -sigma / ((x + b) * (x + b)),
            KernelSpec::GammaDensity { shape, rate, .. } => {
                if x == 0.0 && *shape < 2.0 && *shape != 1.0 {
                    return Err(LssError::Singular);
                }
                let v = self.value(x);
                if x == 0.0 { -rate * v } else { v * ((shape - 1.0) / x - rate) }
            }
            KernelSpec::Separable(_) => unreachable!(),
        })
    }

    /// Exponent of the algebraic behaviour x^p of g near 0 when singular.
    pub(crate) fn head_power(&self) -> Option<f64> {
        match self {
            KernelSpec::Gamma { nu, .. } if *nu < 1.0 => Some(nu - 1.0),
            KernelSpec::GammaDensity { shape, .. } if *shape < 1.0 => Some(shape - 1.0),
            _ => None,
        }
    }

    /// Length scale on which g decays.
    pub fn memory_scale(&self) -> f64 {
        match self {
            KernelSpec::Ou { alpha } => 1.0 / alpha,
            KernelSpec::Gamma { lambda, .. } => 2.0 / lambda,
            KernelSpec::Carma { a, .. } => {
                let slowest = companion(a)
                    .complex_eigenvalues()
                    .iter()
                    .map(|e| -e.re)
                    .fold(f64::INFINITY, f64::min);
                1.0 / slowest
            }
            KernelSpec::Bjerksund { b, .. } => *b,
            KernelSpec::GammaDensity { shape, rate, .. } => shape.max(1.0) / rate,
            KernelSpec::Separable(_) => 1.0,
        }
    }

    /// ∫_a^b g(x) dx for 0 <= a <= b.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        self.stationary()?;
        match self {
            KernelSpec::Ou { alpha } => Ok(((-alpha * a).exp() - (-alpha * b).exp()) / alpha),
            KernelSpec::Bjerksund { sigma, b: c } => Ok(sigma * ((b + c) / (a + c)).ln()),
            KernelSpec::GammaDensity { shape, rate, weight } => Ok(weight
                * (specfun::gamma_p_unchecked(*shape, rate * b) - specfun::gamma_p_unchecked(*shape, rate * a))),
            _ => {
                let head = if a == 0.0 { self.head_power() } else { None };
                quad::integrate_endpoint_singular(|x| self.value(x), a, b, head, None, QTOL)
            }
        }
    }

    /// ∫_0^∞ g(x) dx.
    pub fn mass(&self) -> Result<f64> {
        self.stationary()?;
        match self {
            KernelSpec::Ou { alpha } => Ok(1.0 / alpha),
            KernelSpec::Bjerksund { .. } => {
                Err(LssError::Divergence("the Bjerksund kernel is not integrable".into()))
            }
            KernelSpec::GammaDensity { weight, .. } => Ok(*weight),
            _ => quad::integrate_to_inf_with_head(|x| self.value(x), 0.0, self.memory_scale(), self.head_power(), QTOL),
        }
    }

    /// ∫_a^b g(x)^2 dx for 0 <= a <= b.
    pub fn integral_sq(&self, a: f64, b: f64) -> Result<f64> {
        self.stationary()?;
        match self {
            KernelSpec::Ou { alpha } => {
                Ok(((-2.0 * alpha * a).exp() - (-2.0 * alpha * b).exp()) / (2.0 * alpha))
            }
            KernelSpec::Bjerksund { sigma, b: c } => Ok(sigma * sigma * (1.0 / (a + c) - 1.0 / (b + c))),
            _ => {
                let head = if a == 0.0 { self.head_power().map(|p| 2.0 * p) } else { None };
                if head.is_some_and(|p| p <= -1.0) {
                    return Err(LssError::Divergence("g is not square integrable at 0".into()));
                }
                quad::integrate_endpoint_singular(|x| self.value(x).powi(2), a, b, head, None, QTOL)
            }
        }
    }

    /// Cell averages w_m = (1/dt) ∫_{m dt}^{(m+1) dt} g for m = 0..n.
    pub fn cell_averages(&self, dt: f64, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|m| Ok(self.integral(m as f64 * dt, (m + 1) as f64 * dt)? / dt)).collect()
    }

    /// ∫_0^∞ g(x)^2 dx.
    pub fn l2_norm_sq(&self) -> Result<f64> {
        self.stationary()?;
        match self {
            KernelSpec::Ou { alpha } => Ok(0.5 / alpha),
            // g^2 is the Gamma(2nu - 1, lambda) density
            KernelSpec::Gamma { .. } => Ok(1.0),
            KernelSpec::Bjerksund { sigma, b } => Ok(sigma * sigma / b),
            KernelSpec::Carma { a, b } => Ok(carma_overlap(a, b, 0.0)),
            KernelSpec::GammaDensity { shape, rate, weight } => {
                if *shape <= 0.5 {
                    return Err(LssError::Divergence(format!(
                        "gamma density with shape {shape} <= 1/2 is not square integrable"
                    )));
                }
                let k = *shape;
                let ln = rate.ln() + specfun::ln_gamma_unchecked(2.0 * k - 1.0)
                    - 2.0 * specfun::ln_gamma_unchecked(k)
                    - (2.0 * k - 1.0) * 2f64.ln();
                Ok(weight * weight * ln.exp())
            }
            KernelSpec::Separable(_) => unreachable!(),
        }
    }

    /// ∫_0^∞ g(x)^2 dx by adaptive quadrature.
    pub fn l2_numeric(&self) -> Result<f64> {
        self.overlap_numeric(0.0)
    }

    /// ∫_0^∞ g(x+h) g(x) dx, closed form where available.
    pub fn overlap(&self, h: f64) -> Result<f64> {
        self.stationary()?;
        if h < 0.0 {
            return Err(LssError::Domain(format!("lag must be >= 0, got {h}")));
        }
        if h == 0.0 {
            return self.l2_norm_sq();
        }
        match self {
            KernelSpec::Ou { alpha } => Ok((-alpha * h).exp() / (2.0 * alpha)),
            KernelSpec::Bjerksund { sigma, b } => Ok(sigma * sigma / h * (h / b).ln_1p()),
            KernelSpec::Gamma { nu, lambda } => gamma_kernel_acf(*nu, *lambda, h),
            KernelSpec::Carma { a, b } => Ok(carma_overlap(a, b, h)),
            _ => self.overlap_numeric(h),
        }
    }

    /// ∫_0^∞ g(x+h) g(x) dx by adaptive quadrature.
    pub fn overlap_numeric(&self, h: f64) -> Result<f64> {
        self.stationary()?;
        let head = match self.head_power() {
            Some(p) if h == 0.0 => {
                if 2.0 * p <= -1.0 {
                    return Err(LssError::Divergence("g is not square integrable at 0".into()));
                }
                Some(2.0 * p)
            }
            other => other,
        };
        let scale = self.memory_scale().max(h).max(1e-3);
        quad::integrate_to_inf_with_head(|x| self.value(x + h) * self.value(x), 0.0, scale, head, QTOL)
    }

    /// ∫_T^∞ g(x)^2 dx.
    pub fn tail_sq(&self, t: f64) -> Result<f64> {
        self.stationary()?;
        match self {
            KernelSpec::Ou { alpha } => Ok((-2.0 * alpha * t).exp() / (2.0 * alpha)),
            KernelSpec::Bjerksund { sigma, b } => Ok(sigma * sigma / (t + b)),
            KernelSpec::Carma { a, b } => {
                let p = a.len();
                let e = (companion(a) * t).exp();
                let bv = padded_b(b, p);
                let y = e.transpose() * bv;
                let s = lyapunov(a);
                Ok((y.transpose() * s * y)[(0, 0)])
            }
            _ => {
                if t == 0.0 {
                    return self.l2_norm_sq();
                }
                let scale = self.memory_scale().max(1e-3);
                quad::integrate_to_inf(|x| self.value(x).powi(2), t, scale, QTOL)
            }
        }
    }

    /// Smallest window T with ∫_T^∞ g^2 <= eps ∫_0^∞ g^2 (to bisection accuracy).
    pub fn truncation_window(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(LssError::InvalidParams(format!("truncation eps must lie in (0,1), got {eps}")));
        }
        let total = self.l2_norm_sq()?;
        match self {
            KernelSpec::Ou { alpha } => return Ok(-eps.ln() / (2.0 * alpha)),
            KernelSpec::Bjerksund { b, .. } => return Ok(b * (1.0 / eps - 1.0)),
            _ => {}
        }
        let target = eps * total;
        let mut hi = self.memory_scale();
        let mut guard = 0;
        while self.tail_sq(hi)? > target {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(LssError::Divergence("truncation window search failed".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.tail_sq(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-9 * hi {
                break;
            }
        }
        Ok(hi)
    }

    /// Autocorrelation overlap(h) / overlap(0) of the zero-mean LSS with this kernel.
    pub fn acf_zero_mean(&self, h: f64) -> Result<f64> {
        if h == 0.0 {
            self.stationary()?;
            return Ok(1.0);
        }
        Ok(self.overlap(h)? / self.l2_norm_sq()?)
    }

    /// Regularity at the origin.
    pub fn regularity(&self) -> KernelRegularity {
        match self {
            KernelSpec::Ou { .. } => KernelRegularity {
                g_at_zero: Some(1.0),
                derivative_sq_integrable: true,
                l2_integrable: true,
            },
            KernelSpec::Gamma { nu, .. } => KernelRegularity {
                g_at_zero: if *nu >= 1.0 { Some(self.value(0.0)) } else { None },
                derivative_sq_integrable: *nu > 1.5 || *nu == 1.0,
                l2_integrable: true,
            },
            KernelSpec::Carma { .. } => KernelRegularity {
                g_at_zero: Some(self.value(0.0)),
                derivative_sq_integrable: true,
                l2_integrable: true,
            },
            KernelSpec::Bjerksund { sigma, b } => KernelRegularity {
                g_at_zero: Some(sigma / b),
                derivative_sq_integrable: true,
                l2_integrable: true,
            },
            KernelSpec::GammaDensity { shape, .. } => KernelRegularity {
                g_at_zero: if *shape >= 1.0 { Some(self.value(0.0)) } else { None },
                derivative_sq_integrable: *shape > 1.5 || *shape == 1.0,
                l2_integrable: *shape > 0.5,
            },
            KernelSpec::Separable(k) => {
                // checked numerically on the diagonal: G(t,t) near t = 0
                let g0 = (k.g1)(0.0) * (k.g2)(0.0);
                KernelRegularity {
                    g_at_zero: if g0.is_finite() { Some(g0) } else { None },
                    derivative_sq_integrable: g0.is_finite(),
                    l2_integrable: true,
                }
            }
        }
    }

    /// (c, k) with g(x) = c e^{-k x} when the kernel is a pure exponential.
    pub fn exponential_form(&self) -> Option<(f64, f64)> {
        match self {
            KernelSpec::Ou { alpha } => Some((1.0, *alpha)),
            KernelSpec::Gamma { nu, lambda } if *nu == 1.0 => Some((lambda.sqrt(), 0.5 * lambda)),
            KernelSpec::Carma { a, b } if a.len() == 1 => Some((b[0], a[0])),
            KernelSpec::GammaDensity { shape, rate, weight } if *shape == 1.0 => {
                Some((weight * rate, *rate))
            }
            _ => None,
        }
    }
}

/// Companion matrix of a CARMA(p, q) kernel with coefficients a_1..a_p.
pub fn companion(a: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..p {
        m[(p - 1, j)] = -a[p - 1 - j];
    }
    m
}

fn padded_b(b: &[f64], p: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| b.get(i).copied().unwrap_or(0.0))
}

fn carma_value(a: &[f64], b: &[f64], x: f64) -> f64 {
    let p = a.len();
    // nalgebra's exp is scaling-and-squaring with a Padé approximant
    let e = (companion(a) * x).exp();
    padded_b(b, p).dot(&e.column(p - 1))
}

/// Σ = ∫_0^∞ e^{As} e_p e_p' e^{A's} ds, the solution of AΣ + ΣA' = -e_p e_p'.
fn lyapunov(a: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let m = companion(a);
    let id = DMatrix::<f64>::identity(p, p);
    let big = id.kronecker(&m) + m.kronecker(&id);
    let mut rhs = DVector::zeros(p * p);
    rhs[p * p - 1] = -1.0;
    let sol = big.lu().solve(&rhs).unwrap_or_else(|| DVector::from_element(p * p, f64::NAN));
    DMatrix::from_column_slice(p, p, sol.as_slice())
}

fn carma_overlap(a: &[f64], b: &[f64], h: f64) -> f64 {
    // ∫ g(x+h) g(x) dx = b' e^{Ah} Σ b
    let p = a.len();
    let bv = padded_b(b, p);
    let s = lyapunov(a);
    let e = (companion(a) * h).exp();
    (bv.transpose() * e * s * &bv)[(0, 0)]
}

/// Autocorrelation of the zero-mean LSS with the Gamma(nu, lambda) kernel:
/// K̄_{ν-1/2}(λh/2) / (2^{ν-3/2} Γ(ν-1/2)), with K̄_μ(x) = x^μ K_μ(x).
pub fn gamma_kernel_acf(nu: f64, lambda: f64, h: f64) -> Result<f64> {
    if !(nu > 0.5 && lambda > 0.0) {
        return Err(LssError::Domain(format!("needs nu > 1/2 and lambda > 0, got {nu}, {lambda}")));
    }
    if h < 0.0 {
        return Err(LssError::Domain(format!("lag must be >= 0, got {h}")));
    }
    if h == 0.0 {
        return Ok(1.0);
    }
    let mu = nu - 0.5;
    let x = 0.5 * lambda * h;
    let ln = mu * x.ln() + specfun::ln_bessel_k(mu, x)?
        - (nu - 1.5) * 2f64.ln()
        - specfun::ln_gamma(mu)?;
    Ok(ln.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn all_families() -> Vec<KernelSpec> {
        vec![
            KernelSpec::Ou { alpha: 0.7 },
            KernelSpec::Gamma { nu: 0.672, lambda: 0.055 },
            KernelSpec::Gamma { nu: 1.7, lambda: 1.3 },
            KernelSpec::Carma { a: vec![1.5, 0.5], b: vec![0.7, 1.0] },
            KernelSpec::Bjerksund { sigma: 1.3, b: 2.0 },
        ]
    }

    #[test]
    fn eval_values() {
        assert_eq!(KernelSpec::Ou { alpha: 1.0 }.eval(0.0).unwrap(), 1.0);
        let g = KernelSpec::Gamma { nu: 1.0, lambda: 2.0 };
        // independent evaluation of λ^{ν-1/2} Γ(2ν-1)^{-1/2} x^{ν-1} e^{-λx/2} at ν=1, λ=2, x=1
        let want = 2f64.sqrt() * (-1f64).exp();
        assert!(rel(g.eval(1.0).unwrap(), want) < 1e-14);
        assert!((want - 0.52026).abs() < 1e-5);
        assert_eq!(KernelSpec::Gamma { nu: 0.672, lambda: 0.055 }.eval(0.0), Err(LssError::Singular));
        assert!(KernelSpec::Ou { alpha: 1.0 }.eval(-1.0).is_err());
        assert!(rel(KernelSpec::Bjerksund { sigma: 2.0, b: 4.0 }.eval(1.0).unwrap(), 0.4) < 1e-15);
    }

    #[test]
    fn carma_order_one_is_ou() {
        let c = KernelSpec::carma(vec![0.8], vec![1.0]).unwrap();
        let o = KernelSpec::Ou { alpha: 0.8 };
        for &x in &[0.0, 0.013, 0.31, 0.77, 1.0, 2.4, 3.9, 5.5, 8.25, 13.0] {
            assert!(rel(c.eval(x).unwrap(), o.eval(x).unwrap()) < 1e-12, "x={x}");
        }
    }

    #[test]
    fn carma21_against_eigendecomposition() {
        // A = [[0,1],[-a2,-a1]] has eigenvalues r1, r2; V has columns (1, r_k)
        let (a1, a2, b0) = (1.5f64, 0.5f64, 0.4f64);
        let disc = (a1 * a1 - 4.0 * a2).sqrt();
        let (r1, r2) = ((-a1 + disc) / 2.0, (-a1 - disc) / 2.0);
        let det = r2 - r1;
        // V^{-1} e_2 = (-1, 1) / det
        let oracle = |x: f64| {
            let c1 = -(r1 * x).exp() / det;
            let c2 = (r2 * x).exp() / det;
            // b' V = (b0 + r1, b0 + r2)
            (b0 + r1) * c1 + (b0 + r2) * c2
        };
        let k = KernelSpec::carma(vec![a1, a2], vec![b0, 1.0]).unwrap();
        for &x in &[0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            assert!((k.eval(x).unwrap() - oracle(x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn carma_stationarity_enforced() {
        assert!(KernelSpec::carma(vec![-0.5, 0.5], vec![0.2, 1.0]).is_err());
        assert!(KernelSpec::carma(vec![0.5, -0.1], vec![0.2, 1.0]).is_err());
        assert!(KernelSpec::carma(vec![0.5, 0.1], vec![0.2, 0.9]).is_err());
    }

    #[test]
    fn l2_closed_forms() {
        assert!(rel(KernelSpec::Ou { alpha: 0.5 }.l2_norm_sq().unwrap(), 1.0) < 1e-15);
        assert!(rel(KernelSpec::Bjerksund { sigma: 2.0, b: 4.0 }.l2_norm_sq().unwrap(), 1.0) < 1e-15);
        let g = KernelSpec::Gamma { nu: 0.672, lambda: 0.055 };
        assert!((g.l2_numeric().unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for k in all_families() {
            let l2 = k.l2_norm_sq().unwrap();
            assert!(rel(k.l2_numeric().unwrap(), l2) < 1e-8, "{k:?}");
            for &h in &[0.1, 0.5, 1.0, 3.0, 10.0] {
                let a = k.overlap(h).unwrap();
                let b = k.overlap_numeric(h).unwrap();
                assert!((a - b).abs() < 1e-8 * l2, "{k:?} h={h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn overlap_examples() {
        let b = KernelSpec::Bjerksund { sigma: 1.0, b: 1.0 };
        assert!(rel(b.overlap(1.0).unwrap(), 2f64.ln()) < 1e-15);
        assert!(rel(b.overlap_numeric(1.0).unwrap(), 2f64.ln()) < 1e-9);
        let o = KernelSpec::Ou { alpha: 1.0 };
        let want = (-2f64).exp() / 2.0;
        assert!(rel(o.overlap(2.0).unwrap(), want) < 1e-15);
        assert!(rel(o.overlap_numeric(2.0).unwrap(), want) < 1e-10);
        assert!((want - 0.067668).abs() < 1e-6);
    }

    #[test]
    fn acf_examples() {
        let b = KernelSpec::Bjerksund { sigma: 3.7, b: 1.0 };
        assert!(rel(b.acf_zero_mean(1.0).unwrap(), 2f64.ln()) < 1e-14);
        let g = KernelSpec::Gamma { nu: 1.0, lambda: 2.0 };
        let e1 = (-1f64).exp();
        assert!(rel(g.acf_zero_mean(1.0).unwrap(), e1) < 1e-13);
        assert!(rel(g.overlap_numeric(1.0).unwrap(), e1) < 1e-9);
        for k in all_families() {
            assert_eq!(k.acf_zero_mean(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn overlap_monotone_and_acf_bounded() {
        for k in all_families() {
            let mut prev = k.overlap(0.0).unwrap();
            for i in 1..60 {
                let h = 0.25 * i as f64 * k.memory_scale();
                let v = k.overlap(h).unwrap();
                assert!(v <= prev * (1.0 + 1e-12), "{k:?} h={h}");
                let r = k.acf_zero_mean(h).unwrap();
                assert!((0.0..=1.0).contains(&r));
                prev = v;
            }
            assert!(k.acf_zero_mean(1e4 * k.memory_scale()).unwrap() < 1e-2, "{k:?}");
        }
    }

    #[test]
    fn regularity_flags() {
        let r = KernelSpec::Ou { alpha: 2.0 }.regularity();
        assert_eq!(r.g_at_zero, Some(1.0));
        assert!(r.derivative_sq_integrable);
        let r = KernelSpec::Gamma { nu: 0.672, lambda: 0.055 }.regularity();
        assert_eq!(r.g_at_zero, None);
        let r = KernelSpec::Bjerksund { sigma: 1.0, b: 1.0 }.regularity();
        assert_eq!(r.g_at_zero, Some(1.0));
        assert!(r.derivative_sq_integrable);
        // g'(x) = -1/(x+1)^2 has ∫ g'^2 = 1/3
        let k = KernelSpec::Bjerksund { sigma: 1.0, b: 1.0 };
        let d2 = quad::integrate_to_inf(|x| k.derivative(x).unwrap().powi(2), 0.0, 1.0, 1e-13).unwrap();
        assert!(rel(d2, 1.0 / 3.0) < 1e-9);
        assert!(KernelSpec::Gamma { nu: 1.2, lambda: 1.0 }.regularity().g_at_zero == Some(0.0));
        assert!(!KernelSpec::Gamma { nu: 1.2, lambda: 1.0 }.regularity().derivative_sq_integrable);
        assert!(KernelSpec::Gamma { nu: 1.7, lambda: 1.0 }.regularity().derivative_sq_integrable);
    }

    #[test]
    fn derivatives_match_differences() {
        for k in all_families() {
            for &x in &[0.3, 1.1, 4.0] {
                let h = 1e-5 * x;
                let fd = (k.value(x + h) - k.value(x - h)) / (2.0 * h);
                let d = k.derivative(x).unwrap();
                assert!((fd - d).abs() < 1e-6 * d.abs().max(1e-3), "{k:?} x={x}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn truncation_window_meets_tail_bound() {
        for k in all_families() {
            let w = k.truncation_window(1e-6).unwrap();
            let l2 = k.l2_norm_sq().unwrap();
            let t = k.tail_sq(w).unwrap();
            assert!(t <= 1.0000001e-6 * l2, "{k:?}");
            assert!(k.tail_sq(0.99 * w).unwrap() > 1e-6 * l2, "{k:?}");
        }
    }

    #[test]
    fn cell_averages_sum_to_integral() {
        let k = KernelSpec::Gamma { nu: 0.672, lambda: 0.055 };
        let w = k.cell_averages(0.5, 40).unwrap();
        let total: f64 = w.iter().sum::<f64>() * 0.5;
        let direct = quad::integrate_endpoint_singular(|x| k.value(x), 0.0, 20.0, Some(-0.328), None, 1e-13)
            .unwrap();
        assert!(rel(total, direct) < 1e-10);
        let o = KernelSpec::Ou { alpha: 2.0 };
        let w = o.cell_averages(0.1, 3).unwrap();
        assert!(rel(w[1], ((-0.2f64).exp() - (-0.4f64).exp()) / 0.2) < 1e-14);
    }

    #[test]
    fn gamma_density_kernel_l2() {
        let k = KernelSpec::GammaDensity { shape: 0.656, rate: 0.055, weight: 1.0 / 0.055 };
        assert!(rel(k.l2_norm_sq().unwrap(), k.l2_numeric().unwrap()) < 1e-8);
        assert!(KernelSpec::GammaDensity { shape: 0.344, rate: 1.0, weight: 1.0 }.l2_norm_sq().is_err());
    }

    #[test]
    fn json_round_trip() {
        let k: KernelSpec = serde_json::from_str(r#"{"family":"gamma","nu":0.672,"lambda":0.055}"#).unwrap();
        assert!(matches!(k, KernelSpec::Gamma { nu, lambda } if nu == 0.672 && lambda == 0.055));
        let k: KernelSpec = serde_json::from_str(r#"{"family":"carma","a":[1.5,0.5],"b":[0.4,1.0]}"#).unwrap();
        k.validate().unwrap();
        let s = serde_json::to_string(&KernelSpec::Bjerksund { sigma: 1.0, b: 2.0 }).unwrap();
        assert_eq!(s, r#"{"family":"bjerksund","sigma":1.0,"b":2.0}"#);
    }

    #[test]
    fn exponential_forms() {
        assert_eq!(KernelSpec::Ou { alpha: 0.3 }.exponential_form(), Some((1.0, 0.3)));
        assert!(KernelSpec::Gamma { nu: 1.0, lambda: 2.0 }.exponential_form().is_some());
        assert!(KernelSpec::Gamma { nu: 0.672, lambda: 2.0 }.exponential_form().is_none());
        assert!(KernelSpec::Bjerksund { sigma: 1.0, b: 1.0 }.exponential_form().is_none());
    }
}
