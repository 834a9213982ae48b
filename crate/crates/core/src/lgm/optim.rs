//! Derivative-free minimization for the hyperparameter posterior.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Converged once `max f − min f` over the simplex falls below this...
    pub f_tol: f64,
    /// ...and every vertex lies within this distance (per coordinate) of the
    /// best one.
    pub x_tol: f64,
    /// Initial simplex edge along each coordinate axis.
    pub init_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iter: 500, f_tol: 1e-6, x_tol: 1e-3, init_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0`. Non-finite values count as `+∞`, so proposals
/// where the objective cannot be evaluated are simply rejected.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if d == 0 {
        let v = eval(x0, &mut evals);
        if !v.is_finite() {
            return Err(Error::OptimizationFailed("objective is not finite".into()));
        }
        return Ok(NelderMeadResult { x: vec![], f: v, iterations: 0, evaluations: evals, converged: true });
    }

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += opts.init_step;
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
    if fv.iter().all(|v| v.is_infinite()) {
        return Err(Error::OptimizationFailed("every initial proposal is degenerate".into()));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=d).collect();
    loop {
        // Stable sort keeps the earlier vertex first on ties.
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        let (best, worst, second) = (order[0], order[d], order[d - 1]);
        let f_spread = fv[worst] - fv[best];
        let x_spread = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread < opts.f_tol && x_spread < opts.x_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < fv[best] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if fr < fv[second] {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[worst] {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fv[worst].min(fr) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            for (x, b) in simplex[i].iter_mut().zip(&xb) {
                *x = b + sigma * (*x - b);
            }
            fv[i] = eval(&simplex[i], &mut evals);
        }
    }
    order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
    let best = order[0];
    Ok(NelderMeadResult {
        x: simplex[best].clone(),
        f: fv[best],
        iterations,
        evaluations: evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_iter: 2000, f_tol: 1e-12, x_tol: 1e-6, init_step: 0.5 };
        let r = nelder_mead(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.3).powi(2) };
        let r = nelder_mead(f, &[1.0], &NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn all_degenerate_fails() {
        let r = nelder_mead(|_: &[f64]| f64::NAN, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(matches!(r, Err(Error::OptimizationFailed(_))));
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 2.0).powi(4)).sum::<f64>();
        let x0 = [0.5, -1.0, 3.0];
        let r = nelder_mead(f, &x0, &NelderMeadOptions::default()).unwrap();
        assert!(r.f <= f(&x0));
    }
}
