//! Acceptance–rejection imputation of the latent remembered counts and
//! rounding classes, heaping-fraction checks, and prediction of true counts
//! from recalled counts alone.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::subject_effect_moments;
use crate::model::{
    coarsen, heaping_probs, log_obs_prob_given_effects, ConsistentSet, CovariateLayout, Dataset,
    HeapingClass, ObservationDay, SubjectRecord, Theta,
};
use crate::par::{self, Execution};
use crate::quadrature::QuadratureRule;
use crate::rng::{stream_rng, StreamRng};
use crate::simulation::{poisson_draw, sample_class};

/// How the subject effects are drawn before the per-day rejection loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImputationMode {
    /// Effects from their priors, never redrawn; only `(w, g)` is rejected.
    #[default]
    PriorEffects,
    /// Effects from their posterior given the subject's reports, by
    /// sampling-importance resampling from a t proposal at the effects'
    /// posterior moments; then the same per-day loop.
    FullJoint { proposals: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationOptions {
    pub mode: ImputationMode,
    /// Per-day cap on rejected `(w, g)` pairs.
    pub max_rejects: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        ImputationOptions {
            mode: ImputationMode::PriorEffects,
            max_rejects: 1_000_000,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentImputation {
    pub subject_id: String,
    pub theta_index: usize,
    pub b: f64,
    pub u: f64,
    pub day_index: Vec<u32>,
    pub w: Vec<u32>,
    pub g: Vec<HeapingClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationFailure {
    pub subject_id: String,
    /// Index of the parameter draw (or imputation replicate).
    pub theta_index: usize,
    pub day_index: u32,
    pub y: u32,
    pub rejects: u64,
    /// Poisson mean of the remembered count on the failing day.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub imputations: Vec<LatentImputation>,
    pub failures: Vec<ImputationFailure>,
}

/// One accepted day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayDraw {
    pub w: u32,
    pub g: HeapingClass,
    pub rejects: u64,
}

/// Draw `(w, g)` from the model at fixed effects until `coarsen(w, g) == y`.
///
/// A `w` outside the window of `WG(y)` can never be accepted, so `g` is not
/// drawn for it; the accepted law is unchanged. Returns the rejection count
/// on failure.
pub fn impute_day(
    theta: &Theta,
    y: u32,
    lambda: f64,
    heaping_offset: f64,
    max_rejects: u64,
    rng: &mut StreamRng,
) -> std::result::Result<DayDraw, u64> {
    let set = ConsistentSet::new(y);
    let (lo, hi) = (set.w_lo, set.w_hi());
    let mut rejects = 0u64;
    loop {
        let w = poisson_draw(lambda, rng);
        if w >= lo && w <= hi {
            let probs = heaping_probs(theta, w as f64 * theta.gamma0 + heaping_offset);
            let g = sample_class(&probs, rng);
            if coarsen(w, g) == y {
                return Ok(DayDraw { w, g, rejects });
            }
        }
        rejects += 1;
        if rejects > max_rejects {
            return Err(rejects);
        }
    }
}

fn day_terms(
    theta: &Theta,
    layout: &CovariateLayout,
    subject: &SubjectRecord,
    day: &ObservationDay,
    x: u32,
    b: f64,
    u: f64,
) -> (f64, f64) {
    let lm = theta.beta0
        + theta.beta1 * (x as f64).ln()
        + layout.recall_offset(subject, day, &theta.beta2)
        + b;
    (
        lm.exp(),
        layout.heaping_offset(subject, day, &theta.beta3) + u,
    )
}

fn prior_effects(theta: &Theta, rng: &mut StreamRng) -> (f64, f64) {
    let zb: f64 = StandardNormal.sample(rng);
    let zu: f64 = StandardNormal.sample(rng);
    (theta.sigma_b * zb, theta.sigma_u * zu)
}

/// Effects drawn from their conditional posterior by SIR with a t(5)
/// proposal at the posterior moments (SDs inflated by 1.5).
fn posterior_effects(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
    quad: &QuadratureRule,
    proposals: usize,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    let mom = subject_effect_moments(theta, subject, layout, quad);
    let (cb, sb, cu, su) = match mom {
        Some(m) => (m.b, 1.5 * m.sd_b, m.u, 1.5 * m.sd_u),
        None => (0.0, theta.sigma_b, 0.0, theta.sigma_u),
    };
    let t = StudentT::new(5.0).expect("df > 0");
    let log_t = |z: f64| -3.0 * (1.0 + z * z / 5.0).ln();
    let mut cands = Vec::with_capacity(proposals);
    let mut lw = Vec::with_capacity(proposals);
    for _ in 0..proposals.max(1) {
        let (zb, zu): (f64, f64) = (t.sample(rng), t.sample(rng));
        let (b, u) = (cb + sb * zb, cu + su * zu);
        let mut l = 0.0;
        if theta.sigma_b > 0.0 {
            l += -0.5 * (b / theta.sigma_b).powi(2) - log_t(zb);
        }
        if theta.sigma_u > 0.0 {
            l += -0.5 * (u / theta.sigma_u).powi(2) - log_t(zu);
        }
        for day in &subject.days {
            let zr = layout.recall_row(subject, day);
            let zh = layout.heaping_row(subject, day);
            l += log_obs_prob_given_effects(theta, day, &zr, &zh, b, u)?;
        }
        cands.push((b, u));
        lw.push(l);
    }
    let w = crate::sampling::normalized_weights(&lw)?;
    let idx = WeightedIndex::new(&w).map_err(|_| Error::DegenerateWeights)?;
    Ok(cands[idx.sample(rng)])
}

fn check_theta_draws(theta_draws: &[Theta], layout: &CovariateLayout) -> Result<()> {
    if theta_draws.is_empty() {
        return Err(Error::InvalidInput(
            "no parameter draws to impute from".into(),
        ));
    }
    for t in theta_draws {
        t.validate()?;
        if t.beta2.len() != layout.recall.len() || t.beta3.len() != layout.heaping.len() {
            return Err(Error::DimensionMismatch {
                what: "theta covariate slopes",
                expected: layout.recall.len() + layout.heaping.len(),
                found: t.beta2.len() + t.beta3.len(),
            });
        }
    }
    Ok(())
}

/// For every parameter draw and subject, impute `(b, u)` and then each day's
/// `(w, g)` by rejection. The RNG stream of pair `(k, i)` is
/// `k * n_subjects + i`, so output does not depend on the execution mode.
/// Subjects whose rejection count exceeds the cap on any day are reported
/// in `failures` and produce no imputation.
pub fn impute_latents(
    theta_draws: &[Theta],
    dataset: &Dataset,
    opts: &ImputationOptions,
    seed: u64,
) -> Result<ImputationResult> {
    dataset.validate()?;
    check_theta_draws(theta_draws, &dataset.layout)?;
    let quad = match opts.mode {
        ImputationMode::FullJoint { proposals } => {
            if proposals == 0 {
                return Err(Error::Config(
                    "full-joint imputation needs proposals >= 1".into(),
                ));
            }
            Some(QuadratureRule::gauss_hermite(20)?)
        }
        ImputationMode::PriorEffects => None,
    };
    let n = dataset.subjects.len();
    let layout = &dataset.layout;
    let outcomes = par::map_range(theta_draws.len() * n, opts.exec, |pair| {
        let (k, i) = (pair / n, pair % n);
        let theta = &theta_draws[k];
        let subject = &dataset.subjects[i];
        let mut rng = stream_rng(seed, pair as u64);
        let (b, u) = match (opts.mode, &quad) {
            (ImputationMode::FullJoint { proposals }, Some(q)) => {
                posterior_effects(theta, subject, layout, q, proposals, &mut rng)?
            }
            _ => prior_effects(theta, &mut rng),
        };
        let mut imp = LatentImputation {
            subject_id: subject.subject_id.clone(),
            theta_index: k,
            b,
            u,
            day_index: Vec::with_capacity(subject.days.len()),
            w: Vec::with_capacity(subject.days.len()),
            g: Vec::with_capacity(subject.days.len()),
        };
        for day in &subject.days {
            let (lambda, hoff) = day_terms(theta, layout, subject, day, day.ema_count, b, u);
            match impute_day(
                theta,
                day.tlfb_count,
                lambda,
                hoff,
                opts.max_rejects,
                &mut rng,
            ) {
                Ok(d) => {
                    imp.day_index.push(day.day_index);
                    imp.w.push(d.w);
                    imp.g.push(d.g);
                }
                Err(rejects) => {
                    return Ok(Err(ImputationFailure {
                        subject_id: subject.subject_id.clone(),
                        theta_index: k,
                        day_index: day.day_index,
                        y: day.tlfb_count,
                        rejects,
                        lambda,
                    }))
                }
            }
        }
        Ok::<_, Error>(Ok(imp))
    });
    let mut result = ImputationResult {
        imputations: Vec::new(),
        failures: Vec::new(),
    };
    for o in outcomes {
        match o? {
            Ok(imp) => result.imputations.push(imp),
            Err(f) => result.failures.push(f),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapFractions {
    pub base: u32,
    pub overall: f64,
    pub n: usize,
    /// `(day_index, fraction, count)` in ascending day order.
    pub by_day: Vec<(u32, f64, usize)>,
}

/// Share of counts divisible by `base`, overall and per day index.
pub fn heap_fractions<I>(counts: I, base: u32) -> Result<HeapFractions>
where
    I: IntoIterator<Item = (u32, u32)>,
{
    if ![5, 10, 20].contains(&base) {
        return Err(Error::InvalidInput(format!(
            "base must be 5, 10 or 20, got {base}"
        )));
    }
    let mut per_day: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
    let (mut hits, mut n) = (0usize, 0usize);
    for (day, c) in counts {
        let e = per_day.entry(day).or_default();
        let hit = (c % base == 0) as usize;
        e.0 += hit;
        e.1 += 1;
        hits += hit;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("no counts to summarise".into()));
    }
    Ok(HeapFractions {
        base,
        overall: hits as f64 / n as f64,
        n,
        by_day: per_day
            .into_iter()
            .map(|(d, (h, c))| (d, h as f64 / c as f64, c))
            .collect(),
    })
}

/// Heaping fractions of the reported (TLFB) counts.
pub fn observed_heap_fractions(dataset: &Dataset, base: u32) -> Result<HeapFractions> {
    heap_fractions(
        dataset.days().map(|(_, d)| (d.day_index, d.tlfb_count)),
        base,
    )
}

/// Heaping fractions of imputed remembered counts.
pub fn imputed_heap_fractions(result: &ImputationResult, base: u32) -> Result<HeapFractions> {
    heap_fractions(
        result
            .imputations
            .iter()
            .flat_map(|i| i.day_index.iter().copied().zip(i.w.iter().copied())),
        base,
    )
}

/// Distribution assumed for the unobserved true count, truncated to `x >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueCountModel {
    PointMass {
        value: u32,
    },
    Poisson {
        mean: f64,
    },
    NegativeBinomial {
        mean: f64,
        dispersion: f64,
    },
    /// Uniform over a supplied sample of counts (zeros ignored).
    Empirical {
        values: Vec<u32>,
    },
}

impl TrueCountModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("true-count model: {m}")));
        match self {
            TrueCountModel::PointMass { value } if *value == 0 => bad("point mass must be >= 1"),
            TrueCountModel::Poisson { mean } if !(*mean > 0.0 && mean.is_finite()) => {
                bad("Poisson mean must be positive")
            }
            TrueCountModel::NegativeBinomial { mean, dispersion }
                if !(*mean > 0.0
                    && *dispersion > 0.0
                    && mean.is_finite()
                    && dispersion.is_finite()) =>
            {
                bad("negative binomial mean and dispersion must be positive")
            }
            TrueCountModel::Empirical { values } if !values.iter().any(|&v| v >= 1) => {
                bad("empirical sample has no positive counts")
            }
            _ => Ok(()),
        }
    }

    /// One draw; consumes no randomness for a point mass.
    pub fn sample(&self, rng: &mut StreamRng) -> u32 {
        match self {
            TrueCountModel::PointMass { value } => *value,
            TrueCountModel::Poisson { mean } => loop {
                let x = poisson_draw(*mean, rng);
                if x >= 1 {
                    break x;
                }
            },
            TrueCountModel::NegativeBinomial { mean, dispersion } => {
                let gamma = Gamma::new(*dispersion, mean / dispersion).expect("validated");
                loop {
                    let rate: f64 = gamma.sample(rng);
                    let x = poisson_draw(rate, rng);
                    if x >= 1 {
                        break x;
                    }
                }
            }
            TrueCountModel::Empirical { values } => loop {
                let x = values[rng.random_range(0..values.len())];
                if x >= 1 {
                    break x;
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCountImputation {
    pub subject_id: String,
    pub imputation_index: usize,
    pub b: f64,
    pub u: f64,
    pub day_index: Vec<u32>,
    pub x: Vec<u32>,
    pub w: Vec<u32>,
    pub g: Vec<HeapingClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCountResult {
    pub imputations: Vec<TrueCountImputation>,
    pub failures: Vec<ImputationFailure>,
}

/// Impute true counts for subjects with recalled counts only. Effects come
/// from their priors; per day `x ~ x_model`, then `(w, g)` as in
/// [`impute_latents`] with the mean driven by `x`, redrawing the whole
/// `(x, w, g)` triple on rejection. The `ema_count` field of the subjects is
/// ignored. Stream of pair `(r, i)` is `r * n_subjects + i`.
#[allow(clippy::too_many_arguments)]
pub fn predict_true_counts(
    theta: &Theta,
    subjects: &[SubjectRecord],
    layout: &CovariateLayout,
    x_model: &TrueCountModel,
    n_imputations: usize,
    opts: &ImputationOptions,
    seed: u64,
) -> Result<TrueCountResult> {
    if subjects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_imputations == 0 {
        return Err(Error::Config("n_imputations must be at least 1".into()));
    }
    if opts.mode != ImputationMode::PriorEffects {
        return Err(Error::Config(
            "true-count prediction supports only the prior_effects imputation mode".into(),
        ));
    }
    x_model.validate()?;
    check_theta_draws(std::slice::from_ref(theta), layout)?;
    for s in subjects {
        if s.z_recall.len() != layout.recall.len() || s.z_heaping.len() != layout.heaping.len() {
            return Err(Error::DimensionMismatch {
                what: "subject covariates",
                expected: layout.recall.len() + layout.heaping.len(),
                found: s.z_recall.len() + s.z_heaping.len(),
            });
        }
    }
    let n = subjects.len();
    let outcomes = par::map_range(n_imputations * n, opts.exec, |pair| {
        let (r, i) = (pair / n, pair % n);
        let subject = &subjects[i];
        let mut rng = stream_rng(seed, pair as u64);
        let (b, u) = prior_effects(theta, &mut rng);
        let mut imp = TrueCountImputation {
            subject_id: subject.subject_id.clone(),
            imputation_index: r,
            b,
            u,
            day_index: vec![],
            x: vec![],
            w: vec![],
            g: vec![],
        };
        for day in &subject.days {
            let y = day.tlfb_count;
            let mut rejects = 0u64;
            loop {
                let x = x_model.sample(&mut rng);
                let (lambda, hoff) = day_terms(theta, layout, subject, day, x, b, u);
                // A single attempt: any rejection redraws x as well.
                match impute_day(theta, y, lambda, hoff, 0, &mut rng) {
                    Ok(d) => {
                        imp.day_index.push(day.day_index);
                        imp.x.push(x);
                        imp.w.push(d.w);
                        imp.g.push(d.g);
                        break;
                    }
                    Err(_) => {
                        rejects += 1;
                        if rejects > opts.max_rejects {
                            return Err(ImputationFailure {
                                subject_id: subject.subject_id.clone(),
                                theta_index: r,
                                day_index: day.day_index,
                                y,
                                rejects,
                                lambda,
                            });
                        }
                    }
                }
            }
        }
        Ok(imp)
    });
    let mut result = TrueCountResult {
        imputations: vec![],
        failures: vec![],
    };
    for o in outcomes {
        match o {
            Ok(i) => result.imputations.push(i),
            Err(f) => result.failures.push(f),
        }
    }
    Ok(result)
}
