//! Deterministic local optimizers: a box-constrained Nelder-Mead simplex and BFGS.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of function values across the simplex falls below this.
    pub ftol: f64,
    /// ... and the simplex diameter falls below this.
    pub xtol: f64,
    pub initial_step: f64,
    /// Weight of the squared distance outside the box added to the objective.
    pub penalty: f64,
    /// Number of times the simplex is rebuilt around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            ftol: 1e-14,
            xtol: 1e-10,
            initial_step: 0.1,
            penalty: 1e3,
            restarts: 2,
        }
    }
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// Trial points outside the box are clamped before evaluation and charged a
/// quadratic penalty on the clamping distance, so the simplex is pushed back
/// toward the feasible region without the objective ever being evaluated
/// outside it.
pub fn nelder_mead_box<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(lower.iter().zip(upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    };
    let mut eval = |x: &[f64]| -> f64 {
        let c = clamp(x);
        let dist2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = f(&c);
        let v = if v.is_finite() { v } else { f64::MAX / 4.0 };
        v + opts.penalty * dist2
    };

    let mut best = clamp(x0);
    let mut best_f = eval(&best);
    let mut total_iter = 0;
    let mut converged = false;

    for _round in 0..=opts.restarts {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            let span = (upper[i] - lower[i]).min(1.0);
            let step = opts.initial_step * span.max(1e-3);
            // Step inward so the initial simplex stays feasible.
            v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
            simplex.push(v);
        }
        let mut fv: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
        converged = false;

        for _ in 0..opts.max_iter {
            total_iter += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fv = order.iter().map(|&i| fv[i]).collect();

            let f_spread = (fv[n] - fv[0]).abs();
            let diam = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if f_spread <= opts.ftol * (1.0 + fv[0].abs()) && diam <= opts.xtol {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(1.0);
            let fr = eval(&xr);
            if fr < fv[0] {
                let xe = along(2.0);
                let fe = eval(&xe);
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
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < fv[n].min(fr) {
                    simplex[n] = xc;
                    fv[n] = fc;
                } else {
                    for i in 1..=n {
                        let shrunk: Vec<f64> = simplex[i]
                            .iter()
                            .zip(&simplex[0])
                            .map(|(x, b)| b + 0.5 * (x - b))
                            .collect();
                        fv[i] = eval(&shrunk);
                        simplex[i] = shrunk;
                    }
                }
            }
        }

        let imin = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();
        let improved = fv[imin] < best_f;
        if fv[imin] <= best_f {
            best = clamp(&simplex[imin]);
            best_f = fv[imin];
        }
        if !improved && converged {
            break;
        }
    }

    let f_best = f(&best);
    Minimum { x: best, f: f_best, iterations: total_iter, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative change in objective below which (together with `gtol`) the run stops.
    pub ftol: f64,
    pub gtol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, ftol: 1e-9, gtol: 1e-6 }
    }
}

/// Minimizes a smooth function given value and gradient, with Armijo backtracking.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = fg(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    if !fx.is_finite() {
        return Minimum { x: x0.to_vec(), f: fx, iterations, converged };
    }

    for it in 0..opts.max_iter {
        iterations = it + 1;
        if g.norm() < opts.gtol {
            converged = true;
            break;
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            // Curvature approximation lost positive definiteness; restart from steepest descent.
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &dir;
            let (ft, gt) = fg(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            converged = g.norm() < opts.gtol * 1e3;
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let rel_change = (fx - f_new).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if it == 0 {
                // Scale the initial inverse Hessian to the observed curvature.
                h = DMatrix::identity(n, n) * (sy / y.norm_squared());
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        if rel_change < opts.ftol && g.norm() < opts.gtol {
            converged = true;
            break;
        }
    }
    Minimum { x: x.as_slice().to_vec(), f: fx, iterations, converged }
}
