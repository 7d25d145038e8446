//! Quasi-Newton maximisation with central finite-difference derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative objective change treated as stalled.
    pub f_rel_tol: f64,
    /// Convergence threshold on the scaled gradient norm.
    pub grad_tol: f64,
    /// Relative central-difference step for gradients.
    pub grad_step: f64,
    /// Largest coordinate move attempted by a single line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            f_rel_tol: 1e-9,
            grad_tol: 1e-4,
            grad_step: 1e-4,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub n_evals: usize,
    pub converged: bool,
    pub message: String,
}

fn step_size(rel: f64, x: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// `max_j |g_j| max(|x_j|, 1) / max(|f|, 1)`: gradient norm relative to the
/// scale of the objective and of the coordinates.
pub fn scaled_gradient_norm(grad: &[f64], x: &[f64], f: f64) -> f64 {
    let denom = f.abs().max(1.0);
    grad.iter()
        .zip(x)
        .map(|(g, xi)| g.abs() * xi.abs().max(1.0) / denom)
        .fold(0.0, f64::max)
}

/// Central-difference gradient. Falls back to a one-sided difference where
/// one side is non-finite. Returns the gradient and the evaluation count.
pub fn fd_gradient<F>(
    f: &F,
    x: &[f64],
    rel_step: f64,
    fx: f64,
    exec: Execution,
) -> (Vec<f64>, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let evals = par::map_range(2 * n, exec, |k| {
        let j = k / 2;
        let h = step_size(rel_step, x[j]);
        let mut xp = x.to_vec();
        xp[j] += if k % 2 == 0 { h } else { -h };
        f(&xp)
    });
    let grad = (0..n)
        .map(|j| {
            let h = step_size(rel_step, x[j]);
            let (fp, fm) = (evals[2 * j], evals[2 * j + 1]);
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect();
    (grad, 2 * n)
}

/// Central-difference Hessian, symmetrised.
pub fn fd_hessian<F>(
    f: &F,
    x: &[f64],
    rel_step: f64,
    exec: Execution,
) -> Result<(DMatrix<f64>, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&xi| step_size(rel_step, xi)).collect();
    let fx = f(x);
    // Evaluation points: (i, j, si, sj) with i <= j; diagonal uses (+,+)/(-,-)
    // as x +/- h_i.
    let mut points: Vec<(usize, usize, f64, f64)> = Vec::new();
    for i in 0..n {
        points.push((i, i, 1.0, 0.0));
        points.push((i, i, -1.0, 0.0));
        for j in (i + 1)..n {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                points.push((i, j, si, sj));
            }
        }
    }
    let values = par::map(&points, exec, |&(i, j, si, sj)| {
        let mut xp = x.to_vec();
        xp[i] += si * h[i];
        if i != j {
            xp[j] += sj * h[j];
        }
        f(&xp)
    });
    if !fx.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective(
            "Hessian evaluation produced a non-finite value".into(),
        ));
    }
    let mut hess = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        let (fp, fm) = (values[k], values[k + 1]);
        k += 2;
        hess[(i, i)] = (fp - 2.0 * fx + fm) / (h[i] * h[i]);
        for j in (i + 1)..n {
            let v =
                (values[k] - values[k + 1] - values[k + 2] + values[k + 3]) / (4.0 * h[i] * h[j]);
            k += 4;
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok((sym, points.len() + 1))
}

/// Maximise `f` from `x0` by BFGS with Armijo backtracking.
///
/// Non-finite objective values are treated as infeasible and backtracked
/// away from. The run is `converged` when the scaled gradient norm at the
/// final point is below `opts.grad_tol`.
pub fn maximize<F>(f: &F, x0: &[f64], opts: &BfgsOptions, exec: Execution) -> Result<BfgsOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let mut n_evals = 1;
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x0);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective(format!(
            "objective is {fx} at the initial point"
        )));
    }
    let (g, e) = fd_gradient(f, x.as_slice(), opts.grad_step, fx, exec);
    n_evals += e;
    // Work with the minimisation gradient -grad f.
    let mut grad = -DVector::from_vec(g);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut stalls = 0;
    let mut message = String::from("iteration limit reached");
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        if grad.iter().any(|v| !v.is_finite()) {
            message = "non-finite gradient".into();
            break;
        }
        let gnorm = scaled_gradient_norm(grad.as_slice(), x.as_slice(), fx);
        if gnorm < opts.grad_tol * 1e-2 {
            message = "gradient tolerance reached".into();
            break;
        }
        let mut dir = -(&hinv * &grad);
        let mut slope = grad.dot(&dir);
        if slope >= 0.0 || !slope.is_finite() {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }
        let dmax = dir.amax();
        let mut alpha = if dmax > opts.max_step {
            opts.max_step / dmax
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * alpha;
            let ft = f(trial.as_slice());
            n_evals += 1;
            // Armijo on -f.
            if ft.is_finite() && -ft <= -fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            message = "line search failed".into();
            break;
        };

        let (g_new, e) = fd_gradient(f, x_new.as_slice(), opts.grad_step, f_new, exec);
        n_evals += e;
        let grad_new = -DVector::from_vec(g_new);
        let s = &x_new - &x;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy.is_finite() {
            if fresh {
                hinv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let ident = DMatrix::<f64>::identity(n, n);
            let left = &ident - (&s * y.transpose()) * rho;
            let right = &ident - (&y * s.transpose()) * rho;
            hinv = &left * &hinv * &right + (&s * s.transpose()) * rho;
        }

        let rel_change = (f_new - fx).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        grad = grad_new;
        if rel_change < opts.f_rel_tol {
            stalls += 1;
            let gnorm = scaled_gradient_norm(grad.as_slice(), x.as_slice(), fx);
            if gnorm < opts.grad_tol || stalls >= 3 {
                message = "relative objective change below tolerance".into();
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let grad_out: Vec<f64> = grad.iter().map(|v| -v).collect();
    let grad_norm = scaled_gradient_norm(&grad_out, x.as_slice(), fx);
    Ok(BfgsOutcome {
        x: x.as_slice().to_vec(),
        f: fx,
        converged: grad_norm < opts.grad_tol,
        grad: grad_out,
        grad_norm,
        iterations,
        n_evals,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximises_a_quadratic() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = |x: &[f64]| {
            let d = DVector::from_column_slice(x) - &c;
            -0.5 * (d.transpose() * &a * &d)[(0, 0)]
        };
        let out = maximize(
            &f,
            &[0.0, 0.0, 0.0],
            &BfgsOptions::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert!(out.converged, "{out:?}");
        for (xi, ci) in out.x.iter().zip(c.iter()) {
            assert!((xi - ci).abs() < 1e-5);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = BfgsOptions {
            grad_step: 1e-6,
            ..Default::default()
        };
        let out = maximize(&f, &[-1.2, 1.0], &opts, Execution::Sequential).unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-3 && (out.x[1] - 1.0).abs() < 2e-3,
            "{out:?}"
        );
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = |x: &[f64]| {
            let d = DVector::from_column_slice(x);
            -0.5 * (d.transpose() * &a * &d)[(0, 0)] + 3.0 * x[0]
        };
        let (h, _) = fd_hessian(&f, &[0.3, -1.0, 2.0], 1e-3, Execution::Sequential).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[(i, j)] + a[(i, j)]).abs() < 1e-6, "{h}");
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }

    #[test]
    fn infinite_start_is_an_error() {
        let f = |_: &[f64]| f64::NEG_INFINITY;
        assert!(maximize(&f, &[0.0], &BfgsOptions::default(), Execution::Sequential).is_err());
    }

    #[test]
    fn backtracks_out_of_infeasible_region() {
        // log-barrier at x < 0.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::NEG_INFINITY
            } else {
                x[0].ln() - x[0]
            }
        };
        let out = maximize(&f, &[0.1], &BfgsOptions::default(), Execution::Sequential).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-4, "{out:?}");
    }
}
