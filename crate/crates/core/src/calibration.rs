//! Calibration workflow on a daily spot-price series: robust removal of the
//! seasonal trend, GH fits to the deseasonalised levels and least-squares fits
//! of the autocorrelation function.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{fit_gh_family, rank_by_aic, FamilyTag, FittedModel};
use crate::error::{LssError, Result};
use crate::kernels::{gamma_kernel_acf, KernelSpec};
use crate::optim::{nelder_mead_bounded, NelderMead};
use crate::spot::Seasonality;

/// Huber tuning constant, in units of the robust scale.
pub const HUBER_C: f64 = 1.345;

/// Monday 2000-01-03; business-day index 0 for series read from simulator output.
fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap()
}

/// Daily prices on business days.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub timestamps: Vec<NaiveDate>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(timestamps: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(LssError::InvalidParams(format!(
                "{} dates but {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(LssError::InvalidParams(format!("dates not strictly increasing at {}", w[1])));
        }
        if let Some(p) = prices.iter().find(|p| !p.is_finite()) {
            return Err(LssError::InvalidParams(format!("non-finite price {p}")));
        }
        Ok(PriceSeries { timestamps, prices })
    }

    /// Series on integer business-day indices counted from a fixed Monday.
    pub fn from_business_days(days: &[f64], prices: Vec<f64>) -> Result<Self> {
        let mut ts = Vec::with_capacity(days.len());
        for &d in days {
            let k = d.round();
            if !(k >= 0.0 && (d - k).abs() < 1e-9) {
                return Err(LssError::InvalidParams(format!(
                    "time {d} is not a nonnegative whole business day; simulate with dt = 1"
                )));
            }
            let k = k as i64;
            ts.push(epoch() + Duration::days(7 * (k / 5) + k % 5));
        }
        Self::new(ts, prices)
    }

    /// Reads `date,price` with ISO dates, or the simulator layout `t,path_0,...`
    /// (first path, whole business days).
    pub fn from_csv_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let first = headers.get(0).unwrap_or("").to_ascii_lowercase();
        if headers.len() < 2 {
            return Err(LssError::InvalidParams("csv needs two columns: date,price".into()));
        }
        let mut keys = Vec::new();
        let mut prices = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let price: f64 = field(1)
                .parse()
                .map_err(|_| LssError::InvalidParams(format!("row {}: bad price {:?}", i + 1, field(1))))?;
            keys.push(field(0).to_string());
            prices.push(price);
        }
        match first.as_str() {
            "date" => {
                let ts = keys
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        NaiveDate::parse_from_str(k, "%Y-%m-%d")
                            .map_err(|_| LssError::InvalidParams(format!("row {}: bad date {k:?}", i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(ts, prices)
            }
            "t" => {
                let days = keys
                    .iter()
                    .map(|k| k.parse::<f64>().map_err(|_| LssError::InvalidParams(format!("bad time {k:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                Self::from_business_days(&days, prices)
            }
            other => Err(LssError::InvalidParams(format!("unrecognised csv header {other:?}; expected date,price"))),
        }
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Weekdays elapsed since the first date, the clock of the seasonal trend.
    pub fn business_days(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut count = 0i64;
        let mut prev: Option<NaiveDate> = None;
        for &d in &self.timestamps {
            if let Some(p) = prev {
                let mut day = p;
                while day < d {
                    day += Duration::days(1);
                    if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
                        count += 1;
                    }
                }
            }
            out.push(count as f64);
            prev = Some(d);
        }
        out
    }
}

/// Output of [`deseasonalize`].
#[derive(Debug, Clone, Serialize)]
pub struct Deseasonalized {
    pub seasonality: Seasonality,
    /// Business-day clock of the observations.
    pub times: Vec<f64>,
    /// log S − log Λ̂.
    pub residuals: Vec<f64>,
    /// Final Huber weights.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub condition_number: f64,
}

const COLUMNS: [&str; 6] =
    ["intercept", "cos(year)", "sin(year)", "cos(week)", "sin(week)", "trend"];

/// Robust fit of the seasonal trend to log prices by iteratively reweighted
/// least squares with Huber weights.
pub fn deseasonalize(s: &PriceSeries, robust_iters: usize) -> Result<Deseasonalized> {
    let n = s.len();
    if n < 100 {
        return Err(LssError::InvalidParams(format!("deseasonalising needs at least 100 observations, got {n}")));
    }
    if let Some(p) = s.prices.iter().find(|&&p| p <= 0.0) {
        return Err(LssError::Domain(format!("log prices need positive prices, got {p}")));
    }
    let seas = Seasonality::default();
    let (py, pw) = (seas.period_year, seas.period_week);
    let times = s.business_days();
    let t_scale = times[n - 1].max(1.0);
    let y = DVector::from_iterator(n, s.prices.iter().map(|p| p.ln()));
    let x = DMatrix::from_fn(n, 6, |i, j| {
        let t = times[i];
        match j {
            0 => 1.0,
            1 => (2.0 * PI * t / py).cos(),
            2 => (2.0 * PI * t / py).sin(),
            3 => (2.0 * PI * t / pw).cos(),
            4 => (2.0 * PI * t / pw).sin(),
            _ => t / t_scale,
        }
    });

    let svd = x.clone().svd(false, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let cond = smax / smin;
    if !(smin > 1e-9 * smax) {
        let v_t = svd.v_t.as_ref().unwrap();
        let k = sv.imin();
        let involved: Vec<&str> =
            (0..6).filter(|&j| v_t[(k, j)].abs() > 0.1).map(|j| COLUMNS[j]).collect();
        return Err(LssError::Degenerate(format!(
            "seasonal regressors are collinear (condition number {cond:.3e}); involved: {}",
            involved.join(", ")
        )));
    }

    let mut w = vec![1.0; n];
    let mut beta = wls(&x, &y, &w)?;
    let mut iterations = 0;
    for _ in 0..robust_iters {
        let r = &y - &x * &beta;
        let scale = 1.4826 * mad(r.as_slice());
        if !(scale > 1e-14) {
            break;
        }
        for i in 0..n {
            let a = r[i].abs();
            w[i] = if a <= HUBER_C * scale { 1.0 } else { HUBER_C * scale / a };
        }
        let next = wls(&x, &y, &w)?;
        iterations += 1;
        let change = (&next - &beta).amax();
        beta = next;
        if change < 1e-12 * (1.0 + beta.amax()) {
            break;
        }
    }

    let (beta1, tau1) = amplitude_phase(beta[1], beta[2], py);
    let (beta2, tau2) = amplitude_phase(beta[3], beta[4], pw);
    let seasonality = Seasonality {
        beta0: beta[0],
        beta1,
        beta2,
        beta3: beta[5] / t_scale,
        tau1,
        tau2,
        period_year: py,
        period_week: pw,
    };
    let residuals = (0..n).map(|i| y[i] - seasonality.log_value(times[i])).collect();
    Ok(Deseasonalized { seasonality, times, residuals, weights: w, iterations, condition_number: cond })
}

/// A cos(2πt/P) + B sin(2πt/P) = β cos((τ + 2πt)/P) with β >= 0.
fn amplitude_phase(a: f64, b: f64, period: f64) -> (f64, f64) {
    let beta = a.hypot(b);
    if beta == 0.0 {
        return (0.0, 0.0);
    }
    (beta, period * (-b).atan2(a))
}

fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(y.len(), |i, _| y[i] * sw[i]);
    xw.svd(true, true)
        .solve(&yw, 1e-12)
        .map_err(|e| LssError::Degenerate(format!("weighted least squares failed: {e}")))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mad(r: &[f64]) -> f64 {
    let mut v = r.to_vec();
    let m = median(&mut v);
    let mut d: Vec<f64> = r.iter().map(|x| (x - m).abs()).collect();
    median(&mut d)
}

/// Sample autocorrelation at lags 0..=max_lag, normalised by n and by the
/// lag-0 autocovariance.
pub fn empirical_acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if 2 * max_lag >= n {
        return Err(LssError::InvalidParams(format!("max_lag {max_lag} must be below n/2 = {}", n / 2)));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(LssError::Degenerate("series has zero or undefined variance".into()));
    }
    Ok((0..=max_lag)
        .map(|h| d[..n - h].iter().zip(&d[h..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

/// Correlation of the Gamma-kernel LSS at lag h,
/// K̄_{ν−1/2}(λh/2) / (2^{ν−3/2} Γ(ν−1/2)).
pub fn gamma_acf_theoretical(nu: f64, lambda: f64, h: f64) -> Result<f64> {
    gamma_kernel_acf(nu, lambda, h)
}

/// ⌊√n⌋ lags.
pub fn default_acf_lags(n: usize) -> usize {
    (n as f64).sqrt().floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcfFamily {
    Gamma,
    Carma21,
}

impl AcfFamily {
    pub fn name(self) -> &'static str {
        match self {
            AcfFamily::Gamma => "gamma",
            AcfFamily::Carma21 => "carma21",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcfFitResult {
    pub family: AcfFamily,
    pub kernel: KernelSpec,
    pub sse: f64,
    pub lags_used: usize,
    /// Lags 0..=lags_used.
    pub empirical_acf: Vec<f64>,
    pub fitted_acf: Vec<f64>,
    pub at_bound: bool,
    pub warnings: Vec<String>,
}

struct AcfModel {
    lo: Vec<f64>,
    hi: Vec<f64>,
    starts: Vec<Vec<f64>>,
    build: fn(&[f64]) -> Result<KernelSpec>,
}

// Gamma: (ν, ln λ). CARMA(2,1): (ln a₁, ln a₂, b₀) with b₁ = 1; a₁, a₂ > 0 is
// the stationarity region, checked again through the eigenvalues.
fn gamma_from(u: &[f64]) -> Result<KernelSpec> {
    Ok(KernelSpec::Gamma { nu: u[0], lambda: u[1].exp() })
}

fn carma_from(u: &[f64]) -> Result<KernelSpec> {
    KernelSpec::carma(vec![u[0].exp(), u[1].exp()], vec![u[2], 1.0])
}

fn model_acf(k: &KernelSpec, lags: usize) -> Result<Vec<f64>> {
    let l2 = k.l2_norm_sq()?;
    let mut out = vec![1.0];
    for h in 1..=lags {
        out.push(match k {
            KernelSpec::Gamma { nu, lambda } => gamma_acf_theoretical(*nu, *lambda, h as f64)?,
            _ => k.overlap(h as f64)? / l2,
        });
    }
    Ok(out)
}

/// Least-squares fit of a kernel's autocorrelation to `emp[1..=lags]` by
/// bounded Nelder–Mead from a fixed grid of starting points.
pub fn fit_kernel_acf(emp: &[f64], family: AcfFamily, lags: usize) -> Result<AcfFitResult> {
    if lags == 0 {
        return Err(LssError::InvalidParams("need at least one lag".into()));
    }
    if emp.len() <= lags {
        return Err(LssError::InvalidParams(format!(
            "{} autocorrelations supplied for {lags} lags",
            emp.len().saturating_sub(1)
        )));
    }
    let mut warnings = Vec::new();
    if lags < 5 {
        warnings.push(format!("only {lags} lags: the fit is underdetermined"));
    }
    // e-folding lag sets the scale of the starting grid
    let fold = (1..=lags).find(|&h| emp[h] < (-1.0f64).exp()).unwrap_or(lags) as f64;
    let rate = 1.0 / fold;
    let model = match family {
        AcfFamily::Gamma => {
            let mut starts = Vec::new();
            for nu in [0.6, 0.8, 1.0, 1.5, 3.0] {
                for m in [0.3, 1.0, 3.0] {
                    starts.push(vec![nu, (2.0 * rate * m).ln()]);
                }
            }
            AcfModel {
                lo: vec![0.5 + 1e-4, 1e-5f64.ln()],
                hi: vec![25.0, 50f64.ln()],
                starts,
                build: gamma_from,
            }
        }
        AcfFamily::Carma21 => {
            let mut starts = Vec::new();
            for r1 in [0.5 * rate, rate] {
                for ratio in [2.0, 5.0, 20.0] {
                    let r2 = r1 * ratio;
                    for b0 in [0.3 * r1, r1, 3.0 * r2] {
                        starts.push(vec![(r1 + r2).ln(), (r1 * r2).ln(), b0]);
                    }
                }
            }
            AcfModel {
                lo: vec![1e-5f64.ln(), 1e-10f64.ln(), -100.0],
                hi: vec![100f64.ln(), 1e4f64.ln(), 100.0],
                starts,
                build: carma_from,
            }
        }
    };
    let target = &emp[1..=lags];
    let objective = |u: &[f64]| -> f64 {
        let Ok(k) = (model.build)(u) else { return f64::INFINITY };
        match model_acf(&k, lags) {
            Ok(acf) => acf[1..].iter().zip(target).map(|(m, e)| (m - e).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NelderMead { max_evals: 2000, ftol: 1e-14, xtol: 1e-10, step: 0.2 };
    let mut best = None::<crate::optim::Minimum>;
    for x0 in &model.starts {
        let m = nelder_mead_bounded(objective, x0, &model.lo, &model.hi, &opts);
        if best.as_ref().is_none_or(|b| m.fx < b.fx) {
            best = Some(m);
        }
    }
    let mut best = best.unwrap();
    // polish from the winner
    for _ in 0..3 {
        let m = nelder_mead_bounded(objective, &best.x, &model.lo, &model.hi, &NelderMead { step: 0.05, ..opts.clone() });
        let improved = m.fx < best.fx * (1.0 - 1e-9);
        if m.fx <= best.fx {
            best = m;
        }
        if !improved {
            break;
        }
    }
    if !best.fx.is_finite() {
        return Err(LssError::Convergence(format!("{} acf fit found no admissible parameters", family.name())));
    }
    let at_bound = best.x.iter().enumerate().any(|(i, &v)| {
        let tol = 1e-6 * (model.hi[i] - model.lo[i]);
        v - model.lo[i] < tol || model.hi[i] - v < tol
    });
    if at_bound {
        warnings.push(format!("{} acf fit stopped at a parameter bound", family.name()));
    }
    let kernel = (model.build)(&best.x)?;
    let fitted_acf = model_acf(&kernel, lags)?;
    Ok(AcfFitResult {
        family,
        kernel,
        sse: best.fx,
        lags_used: lags,
        empirical_acf: emp[..=lags].to_vec(),
        fitted_acf,
        at_bound,
        warnings,
    })
}

/// The eleven GH subfamily configurations: five families with and without
/// skewness, plus the Gaussian.
pub fn marginal_configurations() -> Vec<(FamilyTag, bool)> {
    let mut v = Vec::new();
    for f in FamilyTag::ALL {
        if f == FamilyTag::Gaussian {
            v.push((f, true));
        } else {
            v.push((f, false));
            v.push((f, true));
        }
    }
    v
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_iters")]
    pub robust_iters: usize,
    /// Defaults to ⌊√n⌋.
    #[serde(default)]
    pub lags: Option<usize>,
}

fn default_iters() -> usize {
    20
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { robust_iters: default_iters(), lags: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedFit {
    pub family: FamilyTag,
    pub symmetric: bool,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub seasonality: Seasonality,
    pub robust_iterations: usize,
    pub residual_mean: f64,
    pub residual_sd: f64,
    /// Ranked by AIC.
    pub marginal_fits: Vec<FittedModel>,
    pub failed_fits: Vec<FailedFit>,
    pub lags: usize,
    pub acf_fits: Vec<AcfFitResult>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

fn stage<T>(i: usize, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| LssError::Stage { stage: i, name: name.into(), source: Box::new(e) })
}

/// Deseasonalise, fit the GH subfamilies to the residual levels, rank them by
/// AIC and fit both kernel families to the empirical autocorrelation.
pub fn run_pipeline(s: &PriceSeries, cfg: &PipelineConfig) -> Result<CalibrationReport> {
    stage(0, "input", check_input(s))?;
    let des = stage(1, "deseasonalize", deseasonalize(s, cfg.robust_iters))?;
    let x = &des.residuals;
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();

    let results: Vec<_> = marginal_configurations()
        .into_par_iter()
        .map(|(f, sym)| (f, sym, fit_gh_family(x, f, sym)))
        .collect();
    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for (family, symmetric, r) in results {
        match r {
            Ok(m) => fits.push(m),
            Err(e) => failed.push(FailedFit { family, symmetric, error: e.to_string() }),
        }
    }
    if fits.is_empty() {
        return Err(LssError::Stage {
            stage: 2,
            name: "marginal".into(),
            source: Box::new(LssError::Convergence("every GH subfamily fit failed".into())),
        });
    }
    let marginal_fits = rank_by_aic(fits);

    let lags = cfg.lags.unwrap_or_else(|| default_acf_lags(n));
    let emp = stage(3, "empirical acf", empirical_acf(x, lags))?;
    let mut acf_fits = Vec::new();
    let mut warnings = Vec::new();
    for fam in [AcfFamily::Gamma, AcfFamily::Carma21] {
        let r = stage(4, "kernel acf fit", fit_kernel_acf(&emp, fam, lags))?;
        warnings.extend(r.warnings.iter().cloned());
        acf_fits.push(r);
    }
    for f in &failed {
        warnings.push(format!("{} (symmetric={}) fit failed: {}", f.family.name(), f.symmetric, f.error));
    }
    Ok(CalibrationReport {
        n,
        seasonality: des.seasonality,
        robust_iterations: des.iterations,
        residual_mean: mean,
        residual_sd: sd,
        marginal_fits,
        failed_fits: failed,
        lags,
        acf_fits,
        warnings,
        times: des.times,
        residuals: des.residuals,
    })
}

fn check_input(s: &PriceSeries) -> Result<()> {
    if s.is_empty() {
        return Err(LssError::InvalidParams("empty price series".into()));
    }
    PriceSeries::new(s.timestamps.clone(), s.prices.clone()).map(|_| ())
}

impl CalibrationReport {
    /// Writes `report.json` and `tables/{marginal_fits,acf,residuals}.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;

        let mut w = csv::Writer::from_path(tables.join("marginal_fits.csv"))?;
        w.write_record(["rank", "family", "symmetric", "lambda", "alpha_bar", "mu", "sigma", "gamma", "log_likelihood", "aic", "n_params"])?;
        for (i, m) in self.marginal_fits.iter().enumerate() {
            let p = &m.params;
            w.write_record([
                (i + 1).to_string(),
                m.family_tag.name().to_string(),
                m.symmetric.to_string(),
                p.lambda.to_string(),
                p.alpha_bar.to_string(),
                p.mu.to_string(),
                p.sigma.to_string(),
                p.gamma.to_string(),
                m.log_likelihood.to_string(),
                m.aic.to_string(),
                m.n_params.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(tables.join("acf.csv"))?;
        let mut header = vec!["lag".to_string(), "empirical".to_string()];
        header.extend(self.acf_fits.iter().map(|f| f.family.name().to_string()));
        w.write_record(&header)?;
        for h in 0..=self.lags {
            let mut row = vec![h.to_string(), self.acf_fits.first().map_or(f64::NAN, |f| f.empirical_acf[h]).to_string()];
            row.extend(self.acf_fits.iter().map(|f| f.fitted_acf[h].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(tables.join("residuals.csv"))?;
        w.write_record(["t", "residual"])?;
        for (t, r) in self.times.iter().zip(&self.residuals) {
            w.write_record([t.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn series(n: usize, f: impl Fn(f64) -> f64) -> PriceSeries {
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p = t.iter().map(|&t| f(t).exp()).collect();
        PriceSeries::from_business_days(&t, p).unwrap()
    }

    fn ar1(n: usize, phi: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = phi * x + sd * (1.0 - phi * phi).sqrt() * z;
                x
            })
            .collect()
    }

    #[test]
    fn business_day_clock() {
        let s = series(12, |_| 0.0);
        assert_eq!(s.business_days(), (0..12).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(s.timestamps[5].weekday(), Weekday::Mon);
        assert!(s.timestamps.iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
    }

    #[test]
    fn pure_trend_recovered() {
        let s = series(500, |t| 2.0 + 0.001 * t);
        let d = deseasonalize(&s, 20).unwrap();
        assert!((d.seasonality.beta0 - 2.0).abs() < 1e-9);
        assert!((d.seasonality.beta3 - 0.001).abs() < 1e-12);
        assert!(d.seasonality.beta1.abs() < 1e-9 && d.seasonality.beta2.abs() < 1e-9);
        assert!(d.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn phase_as_printed() {
        let truth = Seasonality { beta0: 3.0, beta1: 0.2, beta2: 0.05, beta3: 2e-4, tau1: 40.0, tau2: 1.3, ..Default::default() };
        let s = series(800, |t| truth.log_value(t));
        let d = deseasonalize(&s, 5).unwrap().seasonality;
        for (a, b) in [(d.beta0, 3.0), (d.beta1, 0.2), (d.beta2, 0.05), (d.beta3, 2e-4), (d.tau1, 40.0), (d.tau2, 1.3)] {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn robust_to_a_spike() {
        let truth = Seasonality { beta0: 3.0, beta1: 0.2, beta2: 0.05, beta3: 3e-4, tau1: 20.0, tau2: 0.5, ..Default::default() };
        let noise = ar1(1500, 0.5, 0.1, 7);
        let clean = series(1500, |t| truth.log_value(t) + noise[t as usize]);
        let mut spiked = clean.clone();
        spiked.prices[700] *= (10.0f64 * 0.1).exp();
        let a = deseasonalize(&clean, 20).unwrap().seasonality;
        let b = deseasonalize(&spiked, 20).unwrap().seasonality;
        for (x, y) in [(a.beta0, b.beta0), (a.beta1, b.beta1), (a.beta2, b.beta2), (a.beta3, b.beta3)] {
            assert!(((x - y) / x).abs() < 0.05, "{x} vs {y}");
        }
        let d = deseasonalize(&spiked, 20).unwrap();
        let m = d.residuals.iter().sum::<f64>() / d.residuals.len() as f64;
        assert!(m.abs() < 1e-2);
        assert!(d.weights[700] < 0.2);
    }

    #[test]
    fn weekly_sampling_is_collinear() {
        let t: Vec<f64> = (0..200).map(|i| 5.0 * i as f64).collect();
        let p = t.iter().map(|t| (1.0 + 0.001 * t).exp()).collect();
        let s = PriceSeries::from_business_days(&t, p).unwrap();
        match deseasonalize(&s, 10) {
            Err(LssError::Degenerate(m)) => assert!(m.contains("week"), "{m}"),
            r => panic!("expected collinearity, got {r:?}"),
        }
    }

    #[test]
    fn short_or_nonpositive_series_rejected() {
        assert!(deseasonalize(&series(50, |_| 1.0), 5).is_err());
        let mut s = series(150, |_| 1.0);
        s.prices[3] = -1.0;
        assert!(deseasonalize(&s, 5).is_err());
    }

    #[test]
    fn acf_of_white_noise_and_ar1() {
        let mut rng = stream(3, 0);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let a = empirical_acf(&x, 10).unwrap();
        assert_eq!(a[0], 1.0);
        let band = 4.0 / (n as f64).sqrt();
        assert!(a[1..].iter().all(|v| v.abs() <= band));
        let y = ar1(n, 0.9, 1.0, 4);
        assert!((empirical_acf(&y, 3).unwrap()[1] - 0.9).abs() < 0.02);
        assert!(matches!(empirical_acf(&[2.0; 50], 3), Err(LssError::Degenerate(_))));
        assert!(empirical_acf(&x[..10], 5).is_err());
    }

    #[test]
    fn gamma_acf_closed_form() {
        assert!((gamma_acf_theoretical(1.0, 2.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-14);
        // convergence to 1 is like h^{2ν−1}; mpmath references
        assert!((gamma_acf_theoretical(0.672, 0.055, 1e-6).unwrap() - 0.997581148446922).abs() < 1e-10);
        assert!((gamma_acf_theoretical(0.672, 0.055, 1e-10).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(gamma_acf_theoretical(0.672, 0.055, 0.0).unwrap(), 1.0);
        assert!(gamma_acf_theoretical(0.4, 1.0, 1.0).is_err());
        for nu in [0.6, 0.672, 1.0, 1.5] {
            for lambda in [0.055, 1.0, 2.0] {
                let k = KernelSpec::Gamma { nu, lambda };
                let l2 = k.l2_numeric().unwrap();
                for h in [0.1, 1.0, 3.0, 10.0] {
                    let q = k.overlap_numeric(h).unwrap() / l2;
                    let c = gamma_acf_theoretical(nu, lambda, h).unwrap();
                    assert!((q - c).abs() < 1e-8, "nu={nu} lambda={lambda} h={h}: {q} vs {c}");
                }
            }
        }
    }

    #[test]
    fn gamma_fit_recovers_parameters() {
        let emp: Vec<f64> = (0..=42).map(|h| gamma_acf_theoretical(0.672, 0.055, h as f64).unwrap()).collect();
        let r = fit_kernel_acf(&emp, AcfFamily::Gamma, 42).unwrap();
        let KernelSpec::Gamma { nu, lambda } = r.kernel else { panic!() };
        assert!((nu / 0.672 - 1.0).abs() < 0.05 && (lambda / 0.055 - 1.0).abs() < 0.05, "{nu} {lambda}");
        assert!(r.sse < 1e-10);
        assert_eq!(r.fitted_acf.len(), 43);
    }

    #[test]
    fn ou_acf_collapses_to_unit_shape() {
        let alpha = 0.3;
        let emp: Vec<f64> = (0..=20).map(|h| (-alpha * h as f64).exp()).collect();
        let r = fit_kernel_acf(&emp, AcfFamily::Gamma, 20).unwrap();
        let KernelSpec::Gamma { nu, lambda } = r.kernel else { panic!() };
        assert!((nu - 1.0).abs() < 1e-3 && (lambda - 2.0 * alpha).abs() < 1e-3, "{nu} {lambda}");
    }

    #[test]
    fn carma_fit_matches_carma_acf() {
        let k = KernelSpec::carma(vec![0.5, 0.04], vec![0.3, 1.0]).unwrap();
        let l2 = k.l2_norm_sq().unwrap();
        let emp: Vec<f64> = (0..=30).map(|h| if h == 0 { 1.0 } else { k.overlap(h as f64).unwrap() / l2 }).collect();
        let r = fit_kernel_acf(&emp, AcfFamily::Carma21, 30).unwrap();
        assert!(r.sse < 1e-8, "sse {}", r.sse);
        assert!(r.kernel.validate().is_ok());
    }

    #[test]
    fn few_lags_warn_but_fit() {
        let emp = [1.0, 0.8, 0.6];
        let r = fit_kernel_acf(&emp, AcfFamily::Gamma, 1).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("underdetermined")));
        assert!(fit_kernel_acf(&emp, AcfFamily::Gamma, 5).is_err());
    }

    #[test]
    fn fit_is_reproducible() {
        let noise = ar1(2000, 0.95, 1.0, 9);
        let emp = empirical_acf(&noise, 40).unwrap();
        let a = fit_kernel_acf(&emp, AcfFamily::Carma21, 40).unwrap();
        let b = fit_kernel_acf(&emp, AcfFamily::Carma21, 40).unwrap();
        assert_eq!(a.sse, b.sse);
    }

    #[test]
    fn eleven_configurations() {
        let c = marginal_configurations();
        assert_eq!(c.len(), 11);
        assert_eq!(c.iter().filter(|(f, _)| *f == FamilyTag::Gaussian).count(), 1);
    }

    #[test]
    fn pipeline_on_gaussian_levels() {
        let noise = ar1(600, 0.7, 0.2, 12);
        let s = series(600, |t| 3.0 + 0.1 * ((2.0 * PI * t) / 261.0).cos() + noise[t as usize]);
        let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
        assert_eq!(r.lags, 24);
        assert_eq!(r.marginal_fits.len() + r.failed_fits.len(), 11);
        let aic = |f: FamilyTag, sym: bool| {
            r.marginal_fits.iter().find(|m| m.family_tag == f && m.symmetric == sym).map(|m| m.aic).unwrap()
        };
        assert!(aic(FamilyTag::Nig, false) <= aic(FamilyTag::Gaussian, true) + 2.0 + 1e-6);
        assert!(r.residual_mean.abs() <= 0.02 * r.residual_sd);
        let dir = std::env::temp_dir().join(format!("lss-report-{}", std::process::id()));
        r.write(&dir).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        assert_eq!(json["marginal_fits"].as_array().unwrap().len(), r.marginal_fits.len());
        assert!(dir.join("tables/acf.csv").exists());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn empty_series_fails_at_stage_zero() {
        let s = PriceSeries { timestamps: vec![], prices: vec![] };
        match run_pipeline(&s, &PipelineConfig::default()) {
            Err(LssError::Stage { stage, .. }) => assert_eq!(stage, 0),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn csv_layouts() {
        let a = PriceSeries::from_csv_reader("date,price\n2024-01-05,10.5\n2024-01-08,11\n".as_bytes()).unwrap();
        assert_eq!(a.business_days(), vec![0.0, 1.0]);
        let b = PriceSeries::from_csv_reader("t,path_0,path_1\n0,1.5,2\n1,1.7,2\n2,1.6,2\n".as_bytes()).unwrap();
        assert_eq!(b.prices, vec![1.5, 1.7, 1.6]);
        assert!(PriceSeries::from_csv_reader("t,path_0\n0.5,1\n".as_bytes()).is_err());
        assert!(PriceSeries::from_csv_reader("date,price\n2024-01-08,1\n2024-01-05,1\n".as_bytes()).is_err());
    }
}
