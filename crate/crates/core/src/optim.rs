//! Nelder–Mead simplex search, optionally restricted to a box by projection.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub ftol: f64,
    /// Stop when the simplex diameter falls below this.
    pub xtol: f64,
    /// Initial simplex step per coordinate (relative to |x0|, absolute floor 1e-3).
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_evals: 4000, ftol: 1e-12, xtol: 1e-9, step: 0.1 }
    }
}

/// Result of a simplex search.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: Option<(&[f64], &[f64])>) {
    if let Some((lo, hi)) = bounds {
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    }
}

/// Unconstrained minimisation of `f` from `x0`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMead) -> Minimum {
    run(f, x0, None, opts)
}

/// Minimisation over the box `[lo, hi]`; trial points are projected onto it.
pub fn nelder_mead_bounded<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NelderMead,
) -> Minimum {
    run(f, x0, Some((lo, hi)), opts)
}

fn run<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    opts: &NelderMead,
) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    project(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..n {
        let mut p = start.clone();
        let h = (opts.step * p[i].abs()).max(1e-3 * opts.step / 0.1);
        p[i] += h;
        if let Some((lo, hi)) = bounds {
            if p[i] > hi[i] {
                p[i] = start[i] - h;
            }
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
        simplex.push(p);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();
    let mut converged = false;
    while evals < opts.max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        fv = idx.iter().map(|&i| fv[i]).collect();

        let spread = (fv[n] - fv[0]).abs();
        let diam = simplex
            .iter()
            .skip(1)
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diam <= opts.xtol && spread <= opts.ftol * (1.0 + fv[0].abs()) {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in simplex.iter().take(n) {
            for j in 0..n {
                centroid[j] += p[j] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> =
                (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect();
            project(&mut x, bounds);
            x
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let (xc, fc) = if fr < fv[n] {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                for i in 1..=n {
                    let mut p: Vec<f64> =
                        (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    project(&mut p, bounds);
                    fv[i] = eval(&p, &mut evals);
                    simplex[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), fx: fv[best], evals, converged }
}
