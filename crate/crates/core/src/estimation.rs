//! Mode finding in an unconstrained parameterisation, observed information,
//! Wald and parametric-bootstrap intervals.
//!
//! `phi` layout: `beta0, beta1, beta2.., ln sigma_b, gamma1, ln(gamma1 - gamma2),
//! ln(gamma2 - gamma3), gamma0, beta3.., ln sigma_u`. The two log-SDs are
//! absent when subject effects are switched off.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{dataset_loglik_with, log_posterior_with};
use crate::model::{CovariateLayout, Dataset, ModelSpec, Theta};
use crate::optim::{fd_hessian, maximize, BfgsOptions};
use crate::par::{self, Execution};
use crate::quadrature::QuadratureRule;
use crate::rng::derive_seed;
use crate::simulation::{generate_dataset_with, SimulationDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_recall: usize,
    pub n_heaping: usize,
    pub random_effects: bool,
}

impl ParamLayout {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        ParamLayout {
            n_recall: spec.covariates.recall.len(),
            n_heaping: spec.covariates.heaping.len(),
            random_effects: spec.random_effects,
        }
    }

    pub fn dim(&self) -> usize {
        6 + self.n_recall + self.n_heaping + if self.random_effects { 2 } else { 0 }
    }

    fn idx_tau_b(&self) -> usize {
        2 + self.n_recall
    }

    fn idx_gamma1(&self) -> usize {
        self.idx_tau_b() + self.random_effects as usize
    }

    /// Names of the unconstrained coordinates.
    pub fn names(&self, cov: &CovariateLayout) -> Vec<String> {
        self.build_names(
            cov,
            ["log_sigma_b", "log_gap12", "log_gap23", "log_sigma_u"],
        )
    }

    /// Names of the natural-scale parameters, in the same order.
    pub fn theta_names(&self, cov: &CovariateLayout) -> Vec<String> {
        self.build_names(cov, ["sigma_b", "gamma2", "gamma3", "sigma_u"])
    }

    fn build_names(&self, cov: &CovariateLayout, alt: [&str; 4]) -> Vec<String> {
        let mut v = vec!["beta0".to_string(), "beta1".to_string()];
        v.extend(cov.recall.iter().map(|n| format!("beta2[{n}]")));
        if self.random_effects {
            v.push(alt[0].into());
        }
        v.push("gamma1".into());
        v.push(alt[1].into());
        v.push(alt[2].into());
        v.push("gamma0".into());
        v.extend(cov.heaping.iter().map(|n| format!("beta3[{n}]")));
        if self.random_effects {
            v.push(alt[3].into());
        }
        v
    }

    fn check(&self, theta: &Theta) -> Result<()> {
        if theta.beta2.len() != self.n_recall || theta.beta3.len() != self.n_heaping {
            return Err(Error::DimensionMismatch {
                what: "theta covariate slopes",
                expected: self.n_recall + self.n_heaping,
                found: theta.beta2.len() + theta.beta3.len(),
            });
        }
        Ok(())
    }

    pub fn to_unconstrained(&self, theta: &Theta) -> Result<Vec<f64>> {
        theta.validate()?;
        self.check(theta)?;
        if !theta.intercepts_ordered() {
            return Err(Error::InvalidTheta(
                "intercepts must be strictly decreasing".into(),
            ));
        }
        if self.random_effects && !(theta.sigma_b > 0.0 && theta.sigma_u > 0.0) {
            return Err(Error::InvalidTheta(
                "random-effect SDs must be positive".into(),
            ));
        }
        let mut phi = vec![theta.beta0, theta.beta1];
        phi.extend(&theta.beta2);
        if self.random_effects {
            phi.push(theta.sigma_b.ln());
        }
        phi.push(theta.gamma1);
        phi.push((theta.gamma1 - theta.gamma2).ln());
        phi.push((theta.gamma2 - theta.gamma3).ln());
        phi.push(theta.gamma0);
        phi.extend(&theta.beta3);
        if self.random_effects {
            phi.push(theta.sigma_u.ln());
        }
        Ok(phi)
    }

    pub fn from_unconstrained(&self, phi: &[f64]) -> Result<Theta> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "unconstrained parameter vector",
                expected: self.dim(),
                found: phi.len(),
            });
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTheta(
                "non-finite unconstrained parameter".into(),
            ));
        }
        let mut it = phi.iter().copied();
        let mut next = || it.next().expect("length checked");
        let beta0 = next();
        let beta1 = next();
        let beta2 = (0..self.n_recall).map(|_| next()).collect();
        let sigma_b = if self.random_effects {
            next().exp()
        } else {
            0.0
        };
        let gamma1 = next();
        let gamma2 = gamma1 - next().exp();
        let gamma3 = gamma2 - next().exp();
        let gamma0 = next();
        let beta3 = (0..self.n_heaping).map(|_| next()).collect();
        let sigma_u = if self.random_effects {
            next().exp()
        } else {
            0.0
        };
        let theta = Theta {
            beta0,
            beta1,
            beta2,
            sigma_b,
            gamma1,
            gamma2,
            gamma3,
            gamma0,
            beta3,
            sigma_u,
        };
        // Extreme gaps can round away the strict ordering or overflow.
        if !theta.intercepts_ordered()
            || (self.random_effects && !(theta.sigma_b > 0.0 && theta.sigma_u > 0.0))
        {
            return Err(Error::InvalidTheta(
                "unconstrained vector maps outside the representable region".into(),
            ));
        }
        theta.validate()?;
        Ok(theta)
    }

    /// Log-Jacobian of `from_unconstrained` for a target whose density is on
    /// `(beta, gamma, sigma^2)`.
    pub fn log_jacobian(&self, phi: &[f64]) -> f64 {
        let g = self.idx_gamma1();
        let mut lj = phi[g + 1] + phi[g + 2];
        if self.random_effects {
            let ln2 = std::f64::consts::LN_2;
            lj += ln2 + 2.0 * phi[self.idx_tau_b()];
            lj += ln2 + 2.0 * phi[self.dim() - 1];
        }
        lj
    }

    /// d theta / d phi, ordered like `theta_vector`.
    pub fn theta_jacobian(&self, phi: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::identity(n, n);
        let g = self.idx_gamma1();
        let (e2, e3) = (phi[g + 1].exp(), phi[g + 2].exp());
        // gamma2 = gamma1 - e^d2, gamma3 = gamma1 - e^d2 - e^d3
        j[(g + 1, g)] = 1.0;
        j[(g + 1, g + 1)] = -e2;
        j[(g + 2, g)] = 1.0;
        j[(g + 2, g + 1)] = -e2;
        j[(g + 2, g + 2)] = -e3;
        if self.random_effects {
            let tb = self.idx_tau_b();
            j[(tb, tb)] = phi[tb].exp();
            j[(n - 1, n - 1)] = phi[n - 1].exp();
        }
        j
    }
}

/// Natural-scale parameters flattened in `ParamLayout::theta_names` order.
pub fn theta_vector(theta: &Theta, random_effects: bool) -> Vec<f64> {
    let mut v = vec![theta.beta0, theta.beta1];
    v.extend(&theta.beta2);
    if random_effects {
        v.push(theta.sigma_b);
    }
    v.extend([theta.gamma1, theta.gamma2, theta.gamma3, theta.gamma0]);
    v.extend(&theta.beta3);
    if random_effects {
        v.push(theta.sigma_u);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Log-likelihood plus log-prior.
    Posterior,
    /// Log-likelihood only (maximum likelihood).
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub objective: Objective,
    pub bfgs: BfgsOptions,
    /// Relative central-difference step for the information matrix.
    pub hessian_step: f64,
    pub compute_information: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            objective: Objective::Posterior,
            bfgs: BfgsOptions::default(),
            hessian_step: 1e-3,
            compute_information: true,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub theta_hat: Theta,
    pub phi_hat: Vec<f64>,
    pub param_names: Vec<String>,
    /// Negative Hessian of the objective in phi-space, after any ridge repair.
    pub information: Option<Vec<Vec<f64>>>,
    /// Ridge added to make `information` positive-definite (0 if none).
    pub ridge: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub objective: Objective,
    pub objective_value: f64,
    pub log_likelihood: f64,
    pub message: String,
}

impl ModeResult {
    pub fn information_matrix(&self) -> Option<DMatrix<f64>> {
        let rows = self.information.as_ref()?;
        let n = rows.len();
        Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Data-driven starting point.
pub fn default_init(dataset: &Dataset, spec: &ModelSpec) -> Theta {
    let n = dataset.n_days().max(1) as f64;
    let mean_y = dataset
        .days()
        .map(|(_, d)| d.tlfb_count as f64)
        .sum::<f64>()
        / n;
    let mean_x = dataset.days().map(|(_, d)| d.ema_count as f64).sum::<f64>() / n;
    Theta {
        beta0: mean_y.max(0.5).ln() - 0.5 * mean_x.max(1.0).ln(),
        beta1: 0.5,
        beta2: vec![0.0; spec.covariates.recall.len()],
        sigma_b: if spec.random_effects { 0.3 } else { 0.0 },
        gamma1: -1.0,
        gamma2: -4.0,
        gamma3: -7.0,
        gamma0: 0.1,
        beta3: vec![0.0; spec.covariates.heaping.len()],
        sigma_u: if spec.random_effects { 2.0 } else { 0.0 },
    }
}

fn objective_at(
    theta: &Theta,
    dataset: &Dataset,
    quad: &QuadratureRule,
    spec: &ModelSpec,
    objective: Objective,
    exec: Execution,
) -> f64 {
    let v = match objective {
        Objective::Posterior => log_posterior_with(theta, dataset, quad, spec, exec),
        Objective::Likelihood => dataset_loglik_with(theta, dataset, quad, exec),
    };
    match v {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Maximise the chosen objective over phi starting from `init`.
///
/// Non-convergence is reported in the result, not as an error.
pub fn find_posterior_mode(
    dataset: &Dataset,
    spec: &ModelSpec,
    init: &Theta,
    opts: &FitOptions,
) -> Result<ModeResult> {
    spec.validate()?;
    dataset.validate()?;
    if dataset.layout != spec.covariates {
        return Err(Error::Config(
            "dataset covariate columns do not match the model specification".into(),
        ));
    }
    let layout = ParamLayout::from_spec(spec);
    let mut init = init.clone();
    if !spec.random_effects {
        init.sigma_b = 0.0;
        init.sigma_u = 0.0;
    }
    init.validate_for(spec)?;
    let phi0 = layout.to_unconstrained(&init)?;
    let quad = spec.quadrature()?;
    let exec = opts.exec;
    let f = |phi: &[f64]| match layout.from_unconstrained(phi) {
        Ok(theta) => objective_at(&theta, dataset, &quad, spec, opts.objective, exec),
        Err(_) => f64::NEG_INFINITY,
    };
    let out = maximize(&f, &phi0, &opts.bfgs, Execution::Sequential)?;
    let theta_hat = layout.from_unconstrained(&out.x)?;
    let mut n_evals = out.n_evals;
    let (information, ridge) = if opts.compute_information {
        let (h, e) = fd_hessian(&f, &out.x, opts.hessian_step, Execution::Sequential)?;
        n_evals += e;
        let (m, ridge) = repair_information(-h)?;
        (Some(matrix_rows(&m)), ridge)
    } else {
        (None, 0.0)
    };
    let log_likelihood = dataset_loglik_with(&theta_hat, dataset, &quad, exec)?;
    Ok(ModeResult {
        theta_hat,
        phi_hat: out.x,
        param_names: layout.names(&spec.covariates),
        information,
        ridge,
        converged: out.converged,
        n_evals,
        iterations: out.iterations,
        final_gradient_norm: out.grad_norm,
        objective: opts.objective,
        objective_value: out.f,
        log_likelihood,
        message: out.message,
    })
}

/// Symmetrise and, if Cholesky fails, add a growing ridge
/// `1e-6 (1 + max diag) * 10^k` until it succeeds.
pub fn repair_information(m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective(
            "information matrix is not finite".into(),
        ));
    }
    let m = (&m + m.transpose()) * 0.5;
    if m.clone().cholesky().is_some() {
        return Ok((m, 0.0));
    }
    let max_diag = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut ridge = 1e-6 * (1.0 + max_diag);
    for _ in 0..30 {
        let trial = &m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
        if trial.clone().cholesky().is_some() {
            return Ok((trial, ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "information matrix still indefinite after ridge {ridge:e}"
    )))
}

/// Observed information (negative Hessian of the objective) at `phi_hat`,
/// repaired to be positive-definite. Returns the matrix and the ridge used.
pub fn observed_information(
    phi_hat: &[f64],
    dataset: &Dataset,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<(DMatrix<f64>, f64)> {
    let layout = ParamLayout::from_spec(spec);
    let quad = spec.quadrature()?;
    let f = |phi: &[f64]| match layout.from_unconstrained(phi) {
        Ok(theta) => objective_at(&theta, dataset, &quad, spec, opts.objective, opts.exec),
        Err(_) => f64::NEG_INFINITY,
    };
    let (h, _) = fd_hessian(&f, phi_hat, opts.hessian_step, Execution::Sequential)?;
    repair_information(-h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    Ok(Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0))
}

/// Wald intervals from the information matrix. Coefficients and intercepts
/// use the delta method on the natural scale; SDs are formed on the log scale
/// and exponentiated.
pub fn wald_intervals(mode: &ModeResult, spec: &ModelSpec, level: f64) -> Result<Vec<Interval>> {
    let info = mode
        .information_matrix()
        .ok_or_else(|| Error::Config("fit was run without the information matrix".into()))?;
    let cov = info
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("information matrix".into()))?
        .inverse();
    let layout = ParamLayout::from_spec(spec);
    let z = z_quantile(level)?;
    let jac = layout.theta_jacobian(&mode.phi_hat);
    let cov_theta = &jac * &cov * jac.transpose();
    let est = theta_vector(&mode.theta_hat, spec.random_effects);
    let names = layout.theta_names(&spec.covariates);
    let n = layout.dim();
    let log_sd_slots: Vec<usize> = if spec.random_effects {
        vec![layout.idx_tau_b(), n - 1]
    } else {
        vec![]
    };
    Ok((0..n)
        .map(|k| {
            let (lower, upper) = if log_sd_slots.contains(&k) {
                let se = cov[(k, k)].max(0.0).sqrt();
                let t = mode.phi_hat[k];
                ((t - z * se).exp(), (t + z * se).exp())
            } else {
                let se = cov_theta[(k, k)].max(0.0).sqrt();
                (est[k] - z * se, est[k] + z * se)
            };
            Interval {
                name: names[k].clone(),
                estimate: est[k],
                lower,
                upper,
            }
        })
        .collect())
}

/// Linear-interpolation percentile (type 7) of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub intervals: Vec<Interval>,
    pub replicates: usize,
    pub dropped: usize,
    /// Natural-scale estimates of the kept replicates.
    pub estimates: Vec<Vec<f64>>,
}

/// Percentile intervals from `b` refits of datasets produced by `generate`.
/// Replicates that fail or do not converge are dropped; more than 20% dropped
/// is an error.
pub fn bootstrap_with<G>(
    theta_hat: &Theta,
    spec: &ModelSpec,
    b: usize,
    level: f64,
    opts: &FitOptions,
    generate: G,
) -> Result<BootstrapResult>
where
    G: Fn(usize) -> Result<Dataset> + Sync,
{
    if b < 50 {
        return Err(Error::Config(format!("bootstrap needs B >= 50, got {b}")));
    }
    z_quantile(level)?;
    let inner = FitOptions {
        compute_information: false,
        exec: Execution::Sequential,
        ..*opts
    };
    let fits = par::map_range(b, opts.exec, |r| -> Option<Vec<f64>> {
        let data = generate(r).ok()?;
        let mode = find_posterior_mode(&data, spec, theta_hat, &inner).ok()?;
        mode.converged
            .then(|| theta_vector(&mode.theta_hat, spec.random_effects))
    });
    let estimates: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
    let dropped = b - estimates.len();
    if dropped * 5 > b {
        return Err(Error::TooManyFailures {
            failed: dropped,
            total: b,
        });
    }
    let names = ParamLayout::from_spec(spec).theta_names(&spec.covariates);
    let est = theta_vector(theta_hat, spec.random_effects);
    let alpha = (1.0 - level) / 2.0;
    let intervals = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
            Interval {
                name,
                estimate: est[k],
                lower: percentile(&col, alpha),
                upper: percentile(&col, 1.0 - alpha),
            }
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        replicates: b,
        dropped,
        estimates,
    })
}

/// Parametric bootstrap: simulate `b` datasets from `design` at `theta_hat`,
/// refit each (starting at `theta_hat`), and take percentile intervals.
pub fn parametric_bootstrap_ci(
    theta_hat: &Theta,
    design: &SimulationDesign,
    spec: &ModelSpec,
    b: usize,
    level: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapResult> {
    design.validate()?;
    bootstrap_with(theta_hat, spec, b, level, opts, |r| {
        let s = derive_seed(seed, &format!("bootstrap-{r}"));
        Ok(generate_dataset_with(theta_hat, design, s, Execution::Sequential)?.dataset)
    })
}
