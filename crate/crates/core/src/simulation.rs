//! Synthetic data from the full model and the simulation-study harness.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    self, default_init, find_posterior_mode, wald_intervals, FitOptions, Objective, ParamLayout,
};
use crate::model::{
    coarsen, heaping_probs, CovariateLayout, Dataset, HeapingClass, ModelSpec, ObservationDay,
    SubjectRecord, Theta, VISIT_DAY,
};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// How the true (EMA) counts of simulated subjects are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmaGenerator {
    /// Gamma–Poisson counts with the given mean and size, zeros redrawn.
    NegativeBinomial { mean: f64, dispersion: f64 },
    /// Days drawn independently from an observed pool of counts.
    Empirical { values: Vec<u32> },
    /// Every subject gets this exact vector (one entry per day).
    Fixed { values: Vec<u32> },
}

impl Default for EmaGenerator {
    fn default() -> Self {
        EmaGenerator::NegativeBinomial {
            mean: 22.0,
            dispersion: 5.0,
        }
    }
}

impl EmaGenerator {
    pub fn validate(&self, days: usize) -> Result<()> {
        match self {
            EmaGenerator::NegativeBinomial { mean, dispersion } => {
                if !(*mean > 0.0 && *dispersion > 0.0) {
                    return Err(Error::Config(
                        "negative binomial EMA generator needs positive mean and dispersion".into(),
                    ));
                }
            }
            EmaGenerator::Empirical { values } => {
                if values.is_empty() {
                    return Err(Error::Config("empirical EMA pool is empty".into()));
                }
                if values.contains(&0) {
                    return Err(Error::InvalidInput(
                        "EMA generator would produce a zero count".into(),
                    ));
                }
            }
            EmaGenerator::Fixed { values } => {
                if values.len() != days {
                    return Err(Error::Config(format!(
                        "fixed EMA vector has {} entries for {days} days",
                        values.len()
                    )));
                }
                if values.contains(&0) {
                    return Err(Error::InvalidInput(
                        "EMA generator would produce a zero count".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, days: usize, rng: &mut StreamRng) -> Vec<u32> {
        match self {
            EmaGenerator::NegativeBinomial { mean, dispersion } => {
                let gamma = Gamma::new(*dispersion, mean / dispersion).expect("validated");
                (0..days)
                    .map(|_| loop {
                        let rate: f64 = gamma.sample(rng);
                        let x = poisson_draw(rate, rng);
                        if x >= 1 {
                            break x;
                        }
                    })
                    .collect()
            }
            EmaGenerator::Empirical { values } => (0..days)
                .map(|_| values[rng.random_range(0..values.len())])
                .collect(),
            EmaGenerator::Fixed { values } => values.clone(),
        }
    }
}

pub(crate) fn poisson_draw(mean: f64, rng: &mut StreamRng) -> u32 {
    if !(mean > 1e-300) {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    let v: f64 = d.sample(rng);
    v.min(u32::MAX as f64) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

/// A subject-level covariate drawn once per simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub name: String,
    #[serde(default)]
    pub recall: bool,
    #[serde(default)]
    pub heaping: bool,
    pub distribution: CovariateDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub n_subjects: usize,
    pub days_per_subject: usize,
    #[serde(default)]
    pub ema: EmaGenerator,
    #[serde(default)]
    pub covariates: Vec<CovariateGenerator>,
    /// Day indices flagged as visit days.
    #[serde(default)]
    pub visit_days: Vec<u32>,
    /// Add the visit-day indicator as the last heaping covariate.
    #[serde(default)]
    pub visit_effect_in_heaping: bool,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        SimulationDesign {
            n_subjects: 100,
            days_per_subject: 12,
            ema: EmaGenerator::default(),
            covariates: Vec::new(),
            visit_days: Vec::new(),
            visit_effect_in_heaping: false,
        }
    }
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 1 || self.days_per_subject < 1 {
            return Err(Error::Config(
                "simulation needs at least one subject and one day".into(),
            ));
        }
        self.ema.validate(self.days_per_subject)?;
        for c in &self.covariates {
            match c.distribution {
                CovariateDistribution::Normal { sd, .. } if !(sd >= 0.0) => {
                    return Err(Error::Config(format!(
                        "covariate {}: sd must be >= 0",
                        c.name
                    )))
                }
                CovariateDistribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return Err(Error::Config(format!(
                        "covariate {}: p must be in [0, 1]",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        self.layout().validate()
    }

    pub fn layout(&self) -> CovariateLayout {
        let recall = self
            .covariates
            .iter()
            .filter(|c| c.recall)
            .map(|c| c.name.clone())
            .collect();
        let mut heaping: Vec<String> = self
            .covariates
            .iter()
            .filter(|c| c.heaping)
            .map(|c| c.name.clone())
            .collect();
        if self.visit_effect_in_heaping {
            heaping.push(VISIT_DAY.to_string());
        }
        CovariateLayout { recall, heaping }
    }
}

/// Simulated latent state of one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDay {
    pub day_index: u32,
    pub w: u32,
    pub g: HeapingClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub subject_id: String,
    pub b: f64,
    pub u: f64,
    pub days: Vec<LatentDay>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub truth: Vec<LatentTruth>,
}

/// Known-parameter scenario estimated from a smoking study: substantial
/// mis-remembering and strong heaping.
pub fn scenario_case1() -> (Theta, SimulationDesign) {
    let theta = Theta {
        beta0: 2.358,
        beta1: 0.2628,
        beta2: vec![],
        sigma_b: 0.09f64.sqrt(),
        gamma1: -1.485,
        gamma2: -5.280,
        gamma3: -10.141,
        gamma0: 0.1098,
        beta3: vec![],
        sigma_u: 7.1f64.sqrt(),
    };
    (theta, SimulationDesign::default())
}

/// Minimal mis-remembering: remembered count unbiased for the true count
/// when `b = 0`.
pub fn scenario_case2() -> (Theta, SimulationDesign) {
    let theta = Theta {
        beta0: 0.0,
        beta1: 1.0,
        beta2: vec![],
        sigma_b: 0.05f64.sqrt(),
        gamma1: -1.07,
        gamma2: -4.37,
        gamma3: -6.52,
        gamma0: 0.088,
        beta3: vec![],
        sigma_u: 5.9f64.sqrt(),
    };
    (theta, SimulationDesign::default())
}

/// `E[W | x]` averaging over `b`: the `b = 0` mean times `exp(sigma_b^2 / 2)`.
pub fn marginal_mean_recall(theta: &Theta, x: u32, z_recall: &[f64]) -> Result<f64> {
    let lm = crate::model::recall_log_mean(theta, x, z_recall, 0.0)?;
    Ok((lm + 0.5 * theta.sigma_b * theta.sigma_b).exp())
}

fn draw_class(probs: &[f64; 4], rng: &mut StreamRng) -> HeapingClass {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return HeapingClass::from_index(i);
        }
    }
    // Rounding left r above the total: take the last class with mass.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    HeapingClass::from_index(last)
}

pub(crate) fn sample_class(probs: &[f64; 4], rng: &mut StreamRng) -> HeapingClass {
    draw_class(probs, rng)
}

fn normal(sd: f64, rng: &mut StreamRng) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    } else {
        0.0
    }
}

fn simulate_subject(
    theta: &Theta,
    design: &SimulationDesign,
    layout: &CovariateLayout,
    index: usize,
    seed: u64,
) -> (SubjectRecord, LatentTruth) {
    let mut rng = stream_rng(seed, index as u64);
    let subject_id = format!("S{:04}", index + 1);
    let b = normal(theta.sigma_b, &mut rng);
    let u = normal(theta.sigma_u, &mut rng);

    let mut values = std::collections::HashMap::new();
    for c in &design.covariates {
        let v = match c.distribution {
            CovariateDistribution::Normal { mean, sd } => mean + normal(sd, &mut rng),
            CovariateDistribution::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(&mut rng) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        values.insert(c.name.clone(), v);
    }
    let pick = |names: &[String]| -> Vec<f64> {
        names
            .iter()
            .map(|n| values.get(n).copied().unwrap_or(0.0))
            .collect()
    };
    let mut subject = SubjectRecord {
        subject_id: subject_id.clone(),
        days: Vec::with_capacity(design.days_per_subject),
        z_recall: pick(&layout.recall),
        z_heaping: pick(&layout.heaping),
    };

    let xs = design.ema.draw(design.days_per_subject, &mut rng);
    let mut latent = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        let day_index = t as u32 + 1;
        let mut day = ObservationDay {
            day_index,
            ema_count: x,
            tlfb_count: 0,
            is_visit_day: design.visit_days.contains(&day_index),
        };
        let lm = theta.beta0
            + theta.beta1 * (x as f64).ln()
            + layout.recall_offset(&subject, &day, &theta.beta2)
            + b;
        let w = poisson_draw(lm.exp(), &mut rng);
        let eta = w as f64 * theta.gamma0 + layout.heaping_offset(&subject, &day, &theta.beta3) + u;
        let g = draw_class(&heaping_probs(theta, eta), &mut rng);
        day.tlfb_count = coarsen(w, g);
        subject.days.push(day);
        latent.push(LatentDay { day_index, w, g });
    }
    let truth = LatentTruth {
        subject_id,
        b,
        u,
        days: latent,
    };
    (subject, truth)
}

/// Draw a dataset (and its latent truth) from the model at `theta`.
pub fn generate_dataset(
    theta: &Theta,
    design: &SimulationDesign,
    seed: u64,
) -> Result<SimulatedData> {
    generate_dataset_with(theta, design, seed, Execution::default())
}

pub fn generate_dataset_with(
    theta: &Theta,
    design: &SimulationDesign,
    seed: u64,
    exec: Execution,
) -> Result<SimulatedData> {
    design.validate()?;
    theta.validate()?;
    let layout = design.layout();
    if theta.beta2.len() != layout.recall.len() || theta.beta3.len() != layout.heaping.len() {
        return Err(Error::DimensionMismatch {
            what: "theta covariate slopes",
            expected: layout.recall.len() + layout.heaping.len(),
            found: theta.beta2.len() + theta.beta3.len(),
        });
    }
    let pairs = par::map_range(design.n_subjects, exec, |i| {
        simulate_subject(theta, design, &layout, i, seed)
    });
    let (subjects, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SimulatedData {
        dataset: Dataset::new(layout, subjects)?,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CiMethod {
    /// Wald intervals from the observed information.
    Hessian,
    /// Percentile intervals from a parametric bootstrap of each fit.
    Bootstrap { replicates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub fit: FitOptions,
    pub level: f64,
    /// Start each fit at the generating parameters instead of the data-driven
    /// default.
    pub start_at_truth: bool,
    pub exec: Execution,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            fit: FitOptions {
                objective: Objective::Likelihood,
                ..FitOptions::default()
            },
            level: 0.95,
            start_at_truth: false,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub ok: bool,
    pub converged: bool,
    pub estimates: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub sd: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub parameters: Vec<ParamSummary>,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub ci_method: CiMethod,
    pub level: f64,
    pub replicates: Vec<ReplicateRecord>,
}

impl ScenarioReport {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Plain-text table: true value, mean and SD of estimates, bias, root-MSE
    /// and interval coverage.
    pub fn format_table(&self) -> String {
        let mut s = format!(
            "{} replicates ({} failed), {:.0}% intervals by {}\n",
            self.n_replicates,
            self.n_failed,
            100.0 * self.level,
            match self.ci_method {
                CiMethod::Hessian => "observed information".to_string(),
                CiMethod::Bootstrap { replicates } =>
                    format!("parametric bootstrap (B = {replicates})"),
            }
        );
        s.push_str(&format!(
            "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            "parameter", "true", "mean", "sd", "bias", "rmse", "cover%"
        ));
        for p in &self.parameters {
            s.push_str(&format!(
                "{:<16}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.1}\n",
                p.name, p.true_value, p.mean, p.sd, p.bias, p.rmse, p.coverage_pct
            ));
        }
        s
    }
}

fn replicate(
    theta: &Theta,
    design: &SimulationDesign,
    spec: &ModelSpec,
    ci: CiMethod,
    opts: &StudyOptions,
    index: usize,
    seed: u64,
) -> ReplicateRecord {
    let rep_seed = derive_seed(seed, &format!("replicate-{index}"));
    let mut rec = ReplicateRecord {
        index,
        seed: rep_seed,
        ok: false,
        converged: false,
        estimates: vec![],
        lower: vec![],
        upper: vec![],
        error: None,
    };
    let run = || -> Result<ReplicateRecord> {
        let data = generate_dataset_with(theta, design, rep_seed, Execution::Sequential)?;
        let init = if opts.start_at_truth {
            theta.clone()
        } else {
            default_init(&data.dataset, spec)
        };
        let fit_opts = FitOptions {
            compute_information: matches!(ci, CiMethod::Hessian),
            ..opts.fit
        };
        let mode = find_posterior_mode(&data.dataset, spec, &init, &fit_opts)?;
        let estimates = estimation::theta_vector(&mode.theta_hat, spec.random_effects);
        let (lower, upper) = match ci {
            CiMethod::Hessian => {
                let iv = wald_intervals(&mode, spec, opts.level)?;
                (
                    iv.iter().map(|i| i.lower).collect(),
                    iv.iter().map(|i| i.upper).collect(),
                )
            }
            CiMethod::Bootstrap { replicates } => {
                let boot = estimation::parametric_bootstrap_ci(
                    &mode.theta_hat,
                    design,
                    spec,
                    replicates,
                    opts.level,
                    derive_seed(rep_seed, "bootstrap"),
                    &FitOptions {
                        compute_information: false,
                        ..opts.fit
                    },
                )?;
                (
                    boot.intervals.iter().map(|i| i.lower).collect(),
                    boot.intervals.iter().map(|i| i.upper).collect(),
                )
            }
        };
        Ok(ReplicateRecord {
            index,
            seed: rep_seed,
            ok: mode.converged,
            converged: mode.converged,
            estimates,
            lower,
            upper,
            error: if mode.converged {
                None
            } else {
                Some(format!("optimizer did not converge: {}", mode.message))
            },
        })
    };
    match run() {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(e.to_string());
            rec
        }
    }
}

/// Generate, fit and interval-estimate `n_replicates` datasets at `theta` and
/// summarise estimator bias, spread and coverage.
pub fn run_simulation_study(
    theta: &Theta,
    design: &SimulationDesign,
    spec: &ModelSpec,
    n_replicates: usize,
    ci: CiMethod,
    seed: u64,
    opts: &StudyOptions,
) -> Result<ScenarioReport> {
    if n_replicates < 2 {
        return Err(Error::Config(
            "a simulation study needs at least 2 replicates".into(),
        ));
    }
    design.validate()?;
    spec.validate()?;
    theta.validate_for(spec)?;
    if design.layout() != spec.covariates {
        return Err(Error::Config(
            "model covariates do not match the simulation design".into(),
        ));
    }
    if let CiMethod::Bootstrap { replicates } = ci {
        if replicates < 50 {
            return Err(Error::Config(
                "bootstrap needs at least 50 replicates".into(),
            ));
        }
    }
    let records = par::map_range(n_replicates, opts.exec, |r| {
        replicate(theta, design, spec, ci, opts, r, seed)
    });
    let n_failed = records.iter().filter(|r| !r.ok).count();
    if n_failed * 5 > n_replicates {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total: n_replicates,
        });
    }
    let truth = estimation::theta_vector(theta, spec.random_effects);
    let names = ParamLayout::from_spec(spec).theta_names(&spec.covariates);
    let good: Vec<&ReplicateRecord> = records.iter().filter(|r| r.ok).collect();
    let r = good.len() as f64;
    let parameters = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let est: Vec<f64> = good.iter().map(|g| g.estimates[k]).collect();
            let mean = est.iter().sum::<f64>() / r;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
            let mse = est.iter().map(|e| (e - truth[k]).powi(2)).sum::<f64>() / r;
            let covered = good
                .iter()
                .filter(|g| g.lower[k] <= truth[k] && truth[k] <= g.upper[k])
                .count();
            ParamSummary {
                name,
                true_value: truth[k],
                mean,
                sd: var.sqrt(),
                bias: mean - truth[k],
                rmse: mse.sqrt(),
                coverage_pct: 100.0 * covered as f64 / r,
            }
        })
        .collect();
    Ok(ScenarioReport {
        parameters,
        n_replicates,
        n_failed,
        ci_method: ci,
        level: opts.level,
        replicates: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_marginal_means() {
        let (t1, _) = scenario_case1();
        let m20 = marginal_mean_recall(&t1, 20, &[]).unwrap();
        let m30 = marginal_mean_recall(&t1, 30, &[]).unwrap();
        assert!(
            (m20 - 24.3).abs() < 0.05 && (m30 - 27.0).abs() < 0.05,
            "{m20} {m30}"
        );
        let (t2, _) = scenario_case2();
        let m20 = marginal_mean_recall(&t2, 20, &[]).unwrap();
        let m30 = marginal_mean_recall(&t2, 30, &[]).unwrap();
        assert!(
            (m20 - 20.5).abs() < 0.05 && (m30 - 30.8).abs() < 0.05,
            "{m20} {m30}"
        );
        // lognormal factor
        let marg = marginal_mean_recall(&t1, 20, &[]).unwrap();
        let cond = crate::model::recall_log_mean(&t1, 20, &[], 0.0)
            .unwrap()
            .exp();
        assert!((marg / cond - (t1.sigma_b.powi(2) / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn reports_are_coarsened_latents() {
        let (t, mut d) = scenario_case1();
        d.n_subjects = 50;
        let sim = generate_dataset(&t, &d, 7).unwrap();
        for (s, truth) in sim.dataset.subjects.iter().zip(&sim.truth) {
            assert_eq!(s.subject_id, truth.subject_id);
            for (day, lat) in s.days.iter().zip(&truth.days) {
                assert_eq!(day.tlfb_count, coarsen(lat.w, lat.g));
                assert!(day.ema_count >= 1);
            }
        }
    }

    #[test]
    fn forced_exact_reporting() {
        let (mut t, mut d) = scenario_case1();
        t.sigma_b = 0.0;
        t.sigma_u = 0.0;
        // q(gamma1 + eta) ~ 2e-22: exact reporting is certain.
        t.gamma1 = -50.0;
        t.gamma2 = -51.0;
        t.gamma3 = -52.0;
        t.gamma0 = 0.0;
        d.n_subjects = 20;
        let sim = generate_dataset(&t, &d, 3).unwrap();
        for (s, truth) in sim.dataset.subjects.iter().zip(&sim.truth) {
            for (day, lat) in s.days.iter().zip(&truth.days) {
                assert_eq!(lat.g, HeapingClass::Exact);
                assert_eq!(day.tlfb_count, lat.w);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_across_modes() {
        let (t, mut d) = scenario_case2();
        d.n_subjects = 30;
        let a = generate_dataset_with(&t, &d, 11, Execution::Sequential).unwrap();
        let b = generate_dataset_with(&t, &d, 11, Execution::Parallel).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate_dataset(&t, &d, 12).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn zero_ema_is_rejected() {
        let (t, mut d) = scenario_case2();
        d.ema = EmaGenerator::Fixed {
            values: vec![0; 12],
        };
        assert!(generate_dataset(&t, &d, 1).is_err());
    }

    #[test]
    fn class_frequencies_match_pmf() {
        let (t, _) = scenario_case1();
        let p = heaping_probs(&t, 22.0 * t.gamma0);
        let mut rng = stream_rng(5, 0);
        let n = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[draw_class(&p, &mut rng).index()] += 1;
        }
        for k in 0..4 {
            let f = counts[k] as f64 / n as f64;
            let se = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
            assert!(
                (f - p[k]).abs() < 3.0 * se + 1e-12,
                "class {k}: {f} vs {}",
                p[k]
            );
        }
    }

    #[test]
    fn case1_heaping_and_recall_moments() {
        let (t, mut d) = scenario_case1();
        d.n_subjects = 2000;
        d.days_per_subject = 50;
        let sim = generate_dataset(&t, &d, 99).unwrap();
        let (mut y5, mut w5, mut n) = (0usize, 0usize, 0usize);
        for (s, truth) in sim.dataset.subjects.iter().zip(&sim.truth) {
            for (day, lat) in s.days.iter().zip(&truth.days) {
                n += 1;
                y5 += (day.tlfb_count % 5 == 0) as usize;
                w5 += (lat.w % 5 == 0) as usize;
            }
        }
        let (fy, fw) = (y5 as f64 / n as f64, w5 as f64 / n as f64);
        assert!(fy > 0.5, "{fy}");
        assert!((fw - 0.2).abs() < 0.01, "{fw}");

        // E[W | x = 20] ~= 24.3, with everyone's EMA fixed at 20.
        d.ema = EmaGenerator::Fixed {
            values: vec![20; 50],
        };
        let sim = generate_dataset(&t, &d, 100).unwrap();
        let ws: Vec<f64> = sim
            .truth
            .iter()
            .flat_map(|s| s.days.iter().map(|l| l.w as f64))
            .collect();
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        // Subject effects make days correlated: SE from subject means.
        let subj: Vec<f64> = sim
            .truth
            .iter()
            .map(|s| s.days.iter().map(|l| l.w as f64).sum::<f64>() / s.days.len() as f64)
            .collect();
        let sm = subj.iter().sum::<f64>() / subj.len() as f64;
        let se = (subj.iter().map(|v| (v - sm).powi(2)).sum::<f64>() / (subj.len() as f64 - 1.0))
            .sqrt()
            / (subj.len() as f64).sqrt();
        let expect = marginal_mean_recall(&t, 20, &[]).unwrap();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "{mean} vs {expect} (se {se})"
        );
        assert!((expect - 24.3).abs() < 0.05);
    }

    #[test]
    fn report_table_has_all_rows() {
        let report = ScenarioReport {
            parameters: vec![ParamSummary {
                name: "beta1".into(),
                true_value: 1.0,
                mean: 1.01,
                sd: 0.03,
                bias: 0.01,
                rmse: 0.031,
                coverage_pct: 94.0,
            }],
            n_replicates: 10,
            n_failed: 0,
            ci_method: CiMethod::Hessian,
            level: 0.95,
            replicates: vec![],
        };
        let t = report.format_table();
        assert!(t.contains("beta1") && t.contains("94.0"));
    }
}
