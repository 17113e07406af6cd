//! Numerical quadrature: adaptive Gauss–Kronrod (7/15), semi-infinite panels,
//! algebraic endpoint substitution and composite Gauss–Legendre.

use crate::error::{LssError, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 15-point panel: (Kronrod estimate, |K15 - G7|).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    est: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

const MAX_PANELS: usize = 20_000;

/// Adaptive Gauss–Kronrod on [a, b] to relative accuracy `tol`.
///
/// Integrals that cancel to zero stop once the error drops below `tol`
/// times the integral of |f|.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let (est, err) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, est, err });
    let mut total = est;
    let mut total_err = err;
    let scale = gk15(&|x: f64| f(x).abs(), a, b).0;
    while total_err > tol * total.abs().max(1e-3 * scale) {
        if heap.len() >= MAX_PANELS {
            break;
        }
        let p = heap.pop().expect("nonempty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // cannot split further; keep the panel and stop refining
            heap.push(p);
            break;
        }
        let (e1, r1) = gk15(&f, p.a, m);
        let (e2, r2) = gk15(&f, m, p.b);
        total += e1 + e2 - p.est;
        total_err += r1 + r2 - p.err;
        heap.push(Panel { a: p.a, b: m, est: e1, err: r1 });
        heap.push(Panel { a: m, b: p.b, est: e2, err: r2 });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let mut sum = 0.0;
    let mut errsum = 0.0;
    for p in heap.iter() {
        sum += p.est;
        errsum += p.err;
    }
    if !sum.is_finite() {
        return Err(LssError::Divergence(format!("non-finite integral on [{a}, {b}]")));
    }
    if errsum > 1e-6 * sum.abs().max(scale) {
        return Err(LssError::Convergence(format!(
            "quadrature on [{a}, {b}] stalled with error {errsum:e}"
        )));
    }
    Ok(sum)
}

fn substitution_power(p: f64) -> f64 {
    // x - a = (b - a) u^k flattens (x - a)^p into u^{k(p+1)-1}
    if p >= 0.0 {
        1.0
    } else {
        (3.0 / (p + 1.0)).ceil().clamp(1.0, 60.0)
    }
}

/// Integral on [a, b] of an integrand with algebraic endpoint behaviour
/// `(x-a)^pl` and/or `(b-x)^pr` (pass the exponents, `None` for regular ends).
///
/// The singular point is only resolved to the float spacing near it, so
/// singular endpoints are best placed at 0.
pub fn integrate_endpoint_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    pl: Option<f64>,
    pr: Option<f64>,
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    match (pl, pr) {
        (None, None) => integrate(f, a, b, tol),
        (Some(p), None) => one_sided(&f, a, b, p, true, tol),
        (None, Some(p)) => one_sided(&f, a, b, p, false, tol),
        (Some(l), Some(r)) => {
            let m = 0.5 * (a + b);
            let left = one_sided(&f, a, m, l, true, tol)?;
            let right = one_sided(&f, m, b, r, false, tol)?;
            Ok(left + right)
        }
    }
}

fn one_sided<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, p: f64, at_left: bool, tol: f64) -> Result<f64> {
    let k = substitution_power(p);
    let w = b - a;
    integrate(
        |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let x = if at_left { a + w * u.powf(k) } else { b - w * u.powf(k) };
            let v = f(x) * k * w * u.powf(k - 1.0);
            if v.is_finite() { v } else { 0.0 }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integral over [a, ∞) by doubling panels starting with width `scale`.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, tol: f64) -> Result<f64> {
    integrate_to_inf_with_head(f, a, scale, None, tol)
}

/// As [`integrate_to_inf`], with an algebraic singularity `(x-a)^p` at `a`.
pub fn integrate_to_inf_with_head<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    scale: f64,
    p: Option<f64>,
    tol: f64,
) -> Result<f64> {
    let mut total = integrate_endpoint_singular(&f, a, a + scale, p, None, tol)?;
    let mut lo = a + scale;
    let mut width = scale;
    let mut quiet = 0;
    for _ in 0..400 {
        let part = integrate(&f, lo, lo + width, tol)?;
        total += part;
        lo += width;
        width *= 2.0;
        if part.abs() <= 1e-16 * total.abs() || (total == 0.0 && part == 0.0 && lo > a + 1e6 * scale) {
            quiet += 1;
            if quiet >= 3 {
                return Ok(total);
            }
        } else {
            quiet = 0;
        }
        if !lo.is_finite() {
            break;
        }
    }
    Err(LssError::Divergence(format!("tail integral from {a} does not settle")))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn gl128() -> &'static (Vec<f64>, Vec<f64>) {
    static CELL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CELL.get_or_init(|| gauss_legendre(128))
}

/// Composite 128-point Gauss–Legendre with `panels` equal panels.
pub fn gl128_composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gl128();
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(c + 0.5 * h * xi);
        }
        sum += 0.5 * h * s;
    }
    sum
}

/// 128-point Gauss–Legendre, doubling the panel count until two successive
/// estimates agree to `rel`.
pub fn gl128_doubling<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut panels = 1;
    let mut prev = gl128_composite(&f, a, b, panels);
    for _ in 0..12 {
        panels *= 2;
        let cur = gl128_composite(&f, a, b, panels);
        if (cur - prev).abs() <= rel * cur.abs() || (cur - prev).abs() < 1e-300 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(LssError::Convergence(format!("Gauss-Legendre doubling on [{a}, {b}] did not settle")))
}
