//! Multivariate-t importance sampling around the mode, sampling-importance
//! resampling, and weighted posterior summaries.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimation::{theta_vector, ModeResult, ParamLayout};
use crate::likelihood::log_posterior_with;
use crate::model::{Dataset, ModelSpec, Theta};
use crate::par::{self, Execution};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateT {
    pub location: DVector<f64>,
    /// Lower Cholesky factor of the scale matrix.
    pub chol: DMatrix<f64>,
    pub df: f64,
    log_norm: f64,
}

impl MultivariateT {
    pub fn new(location: Vec<f64>, scale: DMatrix<f64>, df: f64) -> Result<Self> {
        let p = location.len();
        if scale.nrows() != p || scale.ncols() != p {
            return Err(Error::DimensionMismatch {
                what: "t scale matrix",
                expected: p,
                found: scale.nrows(),
            });
        }
        if !(df > 0.0) {
            return Err(Error::Config(format!(
                "t degrees of freedom must be positive, got {df}"
            )));
        }
        let chol = scale
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("proposal scale matrix".into()))?
            .l();
        let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
        let pf = p as f64;
        let log_norm = ln_gamma((df + pf) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * pf * (df * std::f64::consts::PI).ln()
            - log_det_half;
        Ok(MultivariateT {
            location: DVector::from_vec(location),
            chol,
            df,
            log_norm,
        })
    }

    /// Proposal centred at the mode with scale = inverse information.
    pub fn from_mode(mode: &ModeResult, df: f64) -> Result<Self> {
        let info = mode
            .information_matrix()
            .ok_or_else(|| Error::Config("mode was found without the information matrix".into()))?;
        let cov = info
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("information matrix".into()))?
            .inverse();
        let cov = (&cov + cov.transpose()) * 0.5;
        MultivariateT::new(mode.phi_hat.clone(), cov, df)
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.dim();
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let g: f64 = ChiSquared::new(self.df).expect("df checked").sample(rng);
        let x = &self.location + (&self.chol * z) / (g / self.df).sqrt();
        x.as_slice().to_vec()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.location;
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        let q = y.norm_squared();
        self.log_norm - 0.5 * (self.df + self.dim() as f64) * (1.0 + q / self.df).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDraw {
    pub phi: Vec<f64>,
    pub theta: Theta,
    /// Log target minus log proposal density.
    pub log_weight: f64,
}

/// Proposal draws paired with their log importance ratios.
pub type LogRatioDraws = Vec<(Vec<f64>, f64)>;

/// `k` proposal draws with log importance ratios against `log_target`. Draw
/// `i` uses its own RNG stream, so results do not depend on the execution
/// mode. Draws with a non-finite ratio are dropped; their count is returned.
pub fn importance_sample<F>(
    proposal: &MultivariateT,
    k: usize,
    seed: u64,
    exec: Execution,
    log_target: F,
) -> Result<(LogRatioDraws, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if k == 0 {
        return Err(Error::Config(
            "number of proposals must be at least 1".into(),
        ));
    }
    let raw = par::map_range(k, exec, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let x = proposal.sample(&mut rng);
        let lw = log_target(&x) - proposal.log_density(&x);
        (x, lw)
    });
    let kept: Vec<(Vec<f64>, f64)> = raw.into_iter().filter(|(_, lw)| lw.is_finite()).collect();
    let dropped = k - kept.len();
    Ok((kept, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub draws: Vec<WeightedDraw>,
    pub n_proposals: usize,
    pub n_dropped: usize,
    pub df: f64,
}

/// Draw `k` points from the t proposal at the mode and weight them against
/// the posterior in phi-space (log-posterior plus log-Jacobian).
#[allow(clippy::too_many_arguments)]
pub fn draw_proposals(
    mode: &ModeResult,
    dataset: &Dataset,
    spec: &ModelSpec,
    k: usize,
    df: f64,
    seed: u64,
    exec: Execution,
) -> Result<ProposalSet> {
    let proposal = MultivariateT::from_mode(mode, df)?;
    let layout = ParamLayout::from_spec(spec);
    let quad = spec.quadrature()?;
    let target = |phi: &[f64]| match layout.from_unconstrained(phi) {
        Ok(theta) => {
            match log_posterior_with(&theta, dataset, &quad, spec, Execution::Sequential) {
                Ok(lp) => lp + layout.log_jacobian(phi),
                Err(_) => f64::NAN,
            }
        }
        Err(_) => f64::NAN,
    };
    let (kept, n_dropped) = importance_sample(&proposal, k, seed, exec, target)?;
    if kept.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let draws = kept
        .into_iter()
        .map(|(phi, log_weight)| {
            let theta = layout.from_unconstrained(&phi)?;
            Ok(WeightedDraw {
                phi,
                theta,
                log_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalSet {
        draws,
        n_proposals: k,
        n_dropped,
        df,
    })
}

/// Weights `exp(lw - max lw)`.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let m = log_weights
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(log_weights
        .iter()
        .map(|&l| if l.is_finite() { (l - m).exp() } else { 0.0 })
        .collect())
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(log_weights: &[f64]) -> Result<f64> {
    let w = normalized_weights(log_weights)?;
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    Ok(s * s / s2)
}

/// Multinomial resampling with replacement: `size` indices drawn with
/// probability proportional to the importance weights.
pub fn sir_indices(log_weights: &[f64], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > log_weights.len() {
        return Err(Error::Config(format!(
            "resample size {size} exceeds the {} available draws",
            log_weights.len()
        )));
    }
    let w = normalized_weights(log_weights)?;
    let dist = WeightedIndex::new(&w).map_err(|_| Error::DegenerateWeights)?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..size).map(|_| dist.sample(&mut rng)).collect())
}

pub fn sir_resample(draws: &[WeightedDraw], size: usize, seed: u64) -> Result<Vec<Theta>> {
    let lw: Vec<f64> = draws.iter().map(|d| d.log_weight).collect();
    Ok(sir_indices(&lw, size, seed)?
        .into_iter()
        .map(|i| draws[i].theta.clone())
        .collect())
}

/// Weighted mean, SD and equal-tailed interval. The interval endpoints are
/// the smallest values whose cumulative weight reaches each tail level.
pub fn weighted_summary(values: &[f64], weights: &[f64], level: f64) -> (f64, f64, f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / total;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let quantile = |p: f64| {
        let mut acc = 0.0;
        for &i in &order {
            acc += weights[i] / total;
            if acc >= p {
                return values[i];
            }
        }
        values[*order.last().expect("non-empty")]
    };
    let a = (1.0 - level) / 2.0;
    (mean, var.max(0.0).sqrt(), quantile(a), quantile(1.0 - a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPosterior {
    pub name: String,
    /// Coordinate of the joint posterior mode.
    pub mode: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParamPosterior>,
    pub level: f64,
    pub ess: f64,
    pub n_proposals: usize,
    pub n_dropped: usize,
    pub n_resampled: usize,
}

impl PosteriorSummary {
    pub fn param(&self, name: &str) -> Option<&ParamPosterior> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Importance-weighted summaries of every natural-scale parameter, plus the
/// random-effect variances when present.
pub fn posterior_moments(
    set: &ProposalSet,
    theta_hat: &Theta,
    spec: &ModelSpec,
    level: f64,
) -> Result<PosteriorSummary> {
    if set.draws.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let lw: Vec<f64> = set.draws.iter().map(|d| d.log_weight).collect();
    let w = normalized_weights(&lw)?;
    let ess = effective_sample_size(&lw)?;
    let mut names = ParamLayout::from_spec(spec).theta_names(&spec.covariates);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(w.len()); names.len()];
    for d in &set.draws {
        for (c, v) in cols
            .iter_mut()
            .zip(theta_vector(&d.theta, spec.random_effects))
        {
            c.push(v);
        }
    }
    let mut modes = theta_vector(theta_hat, spec.random_effects);
    if spec.random_effects {
        names.push("sigma_b^2".into());
        names.push("sigma_u^2".into());
        cols.push(set.draws.iter().map(|d| d.theta.sigma_b.powi(2)).collect());
        cols.push(set.draws.iter().map(|d| d.theta.sigma_u.powi(2)).collect());
        modes.push(theta_hat.sigma_b.powi(2));
        modes.push(theta_hat.sigma_u.powi(2));
    }
    let parameters = names
        .into_iter()
        .zip(cols)
        .zip(modes)
        .map(|((name, col), mode)| {
            let (mean, sd, lower, upper) = weighted_summary(&col, &w, level);
            ParamPosterior {
                name,
                mode,
                mean,
                sd,
                lower,
                upper,
            }
        })
        .collect();
    Ok(PosteriorSummary {
        parameters,
        level,
        ess,
        n_proposals: set.n_proposals,
        n_dropped: set.n_dropped,
        n_resampled: 0,
    })
}
