//! Command implementations behind the `heapcount` binary.
//!
//! Each command reads a [`RunConfig`], writes its artifacts under
//! `output_dir`, and embeds a [`Provenance`] block (tool version, command,
//! seed, config hash and the effective config) in every JSON output. Nothing
//! time- or host-dependent is written, so a rerun with the same config is
//! byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{self, CiKind, RunConfig};
use crate::diagnostics::{
    heap_fraction_table, identity_crossings, marginal_heaping_curve, mean_recall_curve,
    HeapFractionTable, HeapingCurveMode, RecallCurveMode,
};
use crate::error::{Error, Result};
use crate::estimation::{
    default_init, find_posterior_mode, wald_intervals, FitOptions, Interval, ModeResult,
    ParamLayout,
};
use crate::imputation::{
    impute_latents, predict_true_counts, ImputationFailure, ImputationOptions, ImputationResult,
};
use crate::io;
use crate::likelihood::bic;
use crate::model::{Dataset, ModelSpec, Theta};
use crate::quadrature::QuadratureRule;
use crate::rng::derive_seed;
use crate::sampling::{draw_proposals, posterior_moments, sir_resample, PosteriorSummary};
use crate::simulation::{
    generate_dataset, run_simulation_study, scenario_case1, scenario_case2, CiMethod,
    ScenarioReport, SimulationDesign, StudyOptions,
};

/// Effective sample size below which a fit is flagged.
pub const MIN_ESS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Fit,
    Impute,
    Check,
    Predict,
    Curves,
    Simstudy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Impute => "impute",
            Command::Check => "check",
            Command::Predict => "predict",
            Command::Curves => "curves",
            Command::Simstudy => "simstudy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: Command, cfg: &RunConfig) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            config: cfg.clone(),
        }
    }
}

/// Files written and any warnings that should change the exit status.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_WARNINGS: i32 = 3;

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.warnings.is_empty() => EXIT_OK,
        Ok(_) => EXIT_WARNINGS,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(_) => EXIT_VALIDATION,
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    log::info!("{} (config {})", command.name(), &cfg.hash()[..12]);
    match command {
        Command::Simulate => cmd_simulate(cfg),
        Command::Fit => cmd_fit(cfg),
        Command::Impute => cmd_impute(cfg, false),
        Command::Check => cmd_impute(cfg, true),
        Command::Predict => cmd_predict(cfg),
        Command::Curves => cmd_curves(cfg),
        Command::Simstudy => cmd_simstudy(cfg),
    }
}

struct Writer<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Writer {
            dir: &cfg.output_dir,
            outcome: Outcome::default(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outcome.files.push(p.clone());
        p
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.outcome.warnings.push(msg);
    }
}

/// Parameter vectors named by `[theta]`, with the model structure they
/// belong to.
pub fn resolve_thetas(cfg: &RunConfig) -> Result<(ModelSpec, Vec<Theta>)> {
    let t = cfg.require_theta()?;
    let (spec, thetas) = if let Some(p) = &t.preset {
        let (preset_spec, theta) = config::preset(p)?;
        let spec = ModelSpec {
            covariates: preset_spec.covariates,
            random_effects: preset_spec.random_effects,
            ..cfg.model.clone()
        };
        (spec, vec![theta])
    } else if let Some(path) = &t.fit_file {
        let report: FitReport = serde_json::from_reader(std::fs::File::open(path)?)?;
        (report.model, vec![report.theta_hat])
    } else if let Some(path) = &t.draws_file {
        let mut draws: Vec<Theta> = serde_json::from_reader(std::fs::File::open(path)?)?;
        if let Some(m) = cfg.imputation.max_draws {
            draws.truncate(m);
        }
        (cfg.model.clone(), draws)
    } else {
        let v = t.value.clone().expect("validated: one source is set");
        (cfg.model.clone(), vec![v])
    };
    if thetas.is_empty() {
        return Err(Error::Config(
            "no parameter vectors in [theta] source".into(),
        ));
    }
    for th in &thetas {
        th.validate()?;
        if th.beta2.len() != spec.covariates.recall.len()
            || th.beta3.len() != spec.covariates.heaping.len()
        {
            return Err(Error::Config(format!(
                "parameter vector does not match the covariate layout (recall {:?}, heaping {:?})",
                spec.covariates.recall, spec.covariates.heaping
            )));
        }
    }
    Ok((spec, thetas))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub provenance: Provenance,
    pub theta: Theta,
    pub design: SimulationDesign,
    pub n_subjects: usize,
    pub n_days: usize,
}

/// Scenario parameters and design from `[simulation]` (and `[theta]` for
/// `custom`).
pub fn scenario(cfg: &RunConfig) -> Result<(Theta, SimulationDesign)> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
    let (theta, design) = match sim.scenario.as_str() {
        "case1" => scenario_case1(),
        "case2" => scenario_case2(),
        _ => {
            let design = sim
                .design
                .clone()
                .ok_or_else(|| Error::Config("custom scenario needs [simulation.design]".into()))?;
            let (_, thetas) = resolve_thetas(cfg)?;
            (thetas[0].clone(), design)
        }
    };
    let design = sim.design.clone().unwrap_or(design);
    design.validate()?;
    let layout = design.layout();
    if theta.beta2.len() != layout.recall.len() || theta.beta3.len() != layout.heaping.len() {
        return Err(Error::Config(
            "scenario parameters do not match the design's covariates".into(),
        ));
    }
    Ok((theta, design))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let (theta, design) = scenario(cfg)?;
    let sim = generate_dataset(&theta, &design, derive_seed(cfg.seed, "sim"))?;
    let mut w = Writer::new(cfg);
    io::write_dataset(&w.path("dataset.csv"), &sim.dataset)?;
    io::write_truth(&w.path("truth.csv"), &sim.truth)?;
    let report = SimulateReport {
        provenance: Provenance::new(Command::Simulate, cfg),
        n_subjects: sim.dataset.subjects.len(),
        n_days: sim.dataset.n_days(),
        theta,
        design,
    };
    io::write_json(&w.path("simulate.json"), &report)?;
    Ok(w.outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: Provenance,
    pub model: ModelSpec,
    pub converged: bool,
    pub message: String,
    pub iterations: usize,
    pub n_evals: usize,
    pub gradient_norm: f64,
    pub objective_value: f64,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_subjects: usize,
    pub n_days: usize,
    pub theta_names: Vec<String>,
    pub theta_hat: Theta,
    pub phi_names: Vec<String>,
    pub phi_hat: Vec<f64>,
    pub information: Option<Vec<Vec<f64>>>,
    pub ridge: f64,
    pub wald: Vec<Interval>,
    pub posterior: Option<PosteriorSummary>,
    pub warnings: Vec<String>,
}

fn load_data(cfg: &RunConfig, spec: &ModelSpec) -> Result<Dataset> {
    io::load_dataset(&cfg.require_data()?.path, &spec.covariates)
}

fn cmd_fit(cfg: &RunConfig) -> Result<Outcome> {
    let spec = &cfg.model;
    let data = load_data(cfg, spec)?;
    let init = match &cfg.theta {
        Some(_) => {
            let (s, t) = resolve_thetas(cfg)?;
            if s.covariates != spec.covariates {
                return Err(Error::Config(
                    "[theta] start values use a different covariate layout from [model]".into(),
                ));
            }
            t.into_iter().next().expect("non-empty")
        }
        None => default_init(&data, spec),
    };
    let opts = cfg.fit.options();
    let mode: ModeResult = find_posterior_mode(&data, spec, &init, &opts)?;
    let mut w = Writer::new(cfg);
    if !mode.converged {
        w.warn(format!("optimizer did not converge: {}", mode.message));
    }
    if mode.ridge > 0.0 {
        w.warn(format!(
            "information matrix repaired with ridge {:.3e}",
            mode.ridge
        ));
    }
    let wald = wald_intervals(&mode, spec, cfg.sampler.level)?;
    let set = draw_proposals(
        &mode,
        &data,
        spec,
        cfg.sampler.proposals,
        cfg.sampler.df,
        derive_seed(cfg.seed, "fit"),
        Default::default(),
    )?;
    let mut posterior = posterior_moments(&set, &mode.theta_hat, spec, cfg.sampler.level)?;
    let draws = sir_resample(
        &set.draws,
        cfg.sampler.resample,
        derive_seed(cfg.seed, "resample"),
    )?;
    posterior.n_resampled = draws.len();
    if posterior.ess < MIN_ESS {
        w.warn(format!(
            "importance sampling effective sample size {:.1} is below {MIN_ESS}",
            posterior.ess
        ));
    }
    if set.n_dropped > 0 {
        w.warn(format!(
            "{} proposal draws had a non-finite posterior and were dropped",
            set.n_dropped
        ));
    }
    let layout = ParamLayout::from_spec(spec);
    let report = FitReport {
        provenance: Provenance::new(Command::Fit, cfg),
        model: spec.clone(),
        converged: mode.converged,
        message: mode.message.clone(),
        iterations: mode.iterations,
        n_evals: mode.n_evals,
        gradient_norm: mode.final_gradient_norm,
        objective_value: mode.objective_value,
        log_likelihood: mode.log_likelihood,
        bic: bic(mode.log_likelihood, layout.dim(), data.subjects.len())?,
        n_subjects: data.subjects.len(),
        n_days: data.n_days(),
        theta_names: layout.theta_names(&spec.covariates),
        theta_hat: mode.theta_hat.clone(),
        phi_names: mode.param_names.clone(),
        phi_hat: mode.phi_hat.clone(),
        information: mode.information.clone(),
        ridge: mode.ridge,
        wald,
        posterior: Some(posterior),
        warnings: w.outcome.warnings.clone(),
    };
    io::write_json(&w.path("fit.json"), &report)?;
    io::write_json(&w.path("draws.json"), &draws)?;
    Ok(w.outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeReport {
    pub provenance: Provenance,
    pub n_theta: usize,
    pub n_subjects: usize,
    pub n_imputations: usize,
    pub failures: Vec<ImputationFailure>,
    pub heap_fractions: Option<HeapFractionTable>,
}

fn cmd_impute(cfg: &RunConfig, check: bool) -> Result<Outcome> {
    let (spec, thetas) = resolve_thetas(cfg)?;
    let data = load_data(cfg, &spec)?;
    let opts = ImputationOptions {
        mode: cfg.imputation.mode,
        max_rejects: cfg.imputation.max_rejects,
        ..Default::default()
    };
    let result: ImputationResult =
        impute_latents(&thetas, &data, &opts, derive_seed(cfg.seed, "impute"))?;
    let mut w = Writer::new(cfg);
    if !result.failures.is_empty() {
        w.warn(format!(
            "{} of {} subject imputations exceeded the rejection cap",
            result.failures.len(),
            thetas.len() * data.subjects.len()
        ));
    }
    if result.imputations.is_empty() {
        return Err(Error::TooManyFailures {
            failed: result.failures.len(),
            total: result.failures.len(),
        });
    }
    let table = if check {
        let t = heap_fraction_table(&data, Some(&result))?;
        io::write_heap_table(&w.path("heap_fractions.csv"), &t)?;
        Some(t)
    } else {
        io::write_imputations(&w.path("imputations.csv"), &result)?;
        None
    };
    let command = if check {
        Command::Check
    } else {
        Command::Impute
    };
    let report = ImputeReport {
        provenance: Provenance::new(command, cfg),
        n_theta: thetas.len(),
        n_subjects: data.subjects.len(),
        n_imputations: result.imputations.len(),
        failures: result.failures,
        heap_fractions: table,
    };
    io::write_json(&w.path(&format!("{}.json", command.name())), &report)?;
    Ok(w.outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDay {
    pub subject_id: String,
    pub day: u32,
    pub tlfb_count: u32,
    pub n: usize,
    pub mean_x: f64,
    pub sd_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub provenance: Provenance,
    pub theta: Theta,
    pub n_imputations: usize,
    pub failures: Vec<ImputationFailure>,
    pub days: Vec<PredictedDay>,
}

fn cmd_predict(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg
        .predict
        .as_ref()
        .ok_or_else(|| Error::Config("missing [predict] section".into()))?;
    let (spec, thetas) = resolve_thetas(cfg)?;
    let theta = &thetas[0];
    let data = io::load_reports(&cfg.require_data()?.path, &spec.covariates)?;
    let opts = ImputationOptions {
        mode: cfg.imputation.mode,
        max_rejects: cfg.imputation.max_rejects,
        ..Default::default()
    };
    let result = predict_true_counts(
        theta,
        &data.subjects,
        &data.layout,
        &p.x_model,
        p.n_imputations,
        &opts,
        derive_seed(cfg.seed, "predict"),
    )?;
    let mut w = Writer::new(cfg);
    if !result.failures.is_empty() {
        w.warn(format!(
            "{} subject imputations exceeded the rejection cap",
            result.failures.len()
        ));
    }
    let mut days = vec![];
    for s in &data.subjects {
        let imps: Vec<_> = result
            .imputations
            .iter()
            .filter(|i| i.subject_id == s.subject_id)
            .collect();
        for (t, d) in s.days.iter().enumerate() {
            let xs: Vec<f64> = imps.iter().map(|i| i.x[t] as f64).collect();
            let n = xs.len();
            let mean = if n > 0 {
                xs.iter().sum::<f64>() / n as f64
            } else {
                f64::NAN
            };
            let sd = if n > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            days.push(PredictedDay {
                subject_id: s.subject_id.clone(),
                day: d.day_index,
                tlfb_count: d.tlfb_count,
                n,
                mean_x: mean,
                sd_x: sd,
            });
        }
    }
    io::write_predictions(&w.path("predictions.csv"), &result)?;
    let report = PredictReport {
        provenance: Provenance::new(Command::Predict, cfg),
        theta: theta.clone(),
        n_imputations: p.n_imputations,
        failures: result.failures,
        days,
    };
    io::write_json(&w.path("predict.json"), &report)?;
    Ok(w.outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvesReport {
    pub provenance: Provenance,
    pub theta: Theta,
    /// True counts where the mean-recall curves cross the identity line.
    pub conditional_crossings: Vec<f64>,
    pub marginal_crossings: Vec<f64>,
}

fn profile(given: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match given.len() {
        0 => Ok(vec![0.0; n]),
        k if k == n => Ok(given.to_vec()),
        k => Err(Error::Config(format!(
            "curves.{what} has {k} values, the model has {n} covariates"
        ))),
    }
}

fn cmd_curves(cfg: &RunConfig) -> Result<Outcome> {
    let (spec, thetas) = resolve_thetas(cfg)?;
    let theta = &thetas[0];
    let c = &cfg.curves;
    let layout = &spec.covariates;
    let zr = profile(&c.recall_profile, layout.recall.len(), "recall_profile")?;
    let zh = profile(&c.heaping_profile, layout.heaping.len(), "heaping_profile")?;
    let xs: Vec<u32> = (1..=c.x_max).collect();
    let ws: Vec<u32> = (0..=c.w_max).collect();
    let quad = QuadratureRule::gauss_hermite(c.nodes)?.fixed();
    let mut w = Writer::new(cfg);
    let cond = mean_recall_curve(theta, layout, &xs, &zr, RecallCurveMode::ConditionalB0)?;
    let marg = mean_recall_curve(theta, layout, &xs, &zr, RecallCurveMode::Marginal)?;
    io::write_curve(&w.path("recall_conditional.csv"), &cond)?;
    io::write_curve(&w.path("recall_marginal.csv"), &marg)?;
    let mut visits = vec![false];
    if layout.heaping_visit_slot().is_some() {
        visits.push(true);
    }
    for visit in visits {
        for (mode, tag) in [
            (HeapingCurveMode::Marginal, "marginal"),
            (HeapingCurveMode::Conditional, "conditional"),
        ] {
            let curve = marginal_heaping_curve(theta, layout, &ws, &zh, visit, &quad, mode)?;
            let day = if visit { "visit" } else { "nonvisit" };
            io::write_curve(&w.path(&format!("heaping_{day}_{tag}.csv")), &curve)?;
        }
    }
    let report = CurvesReport {
        provenance: Provenance::new(Command::Curves, cfg),
        theta: theta.clone(),
        conditional_crossings: identity_crossings(&cond),
        marginal_crossings: identity_crossings(&marg),
    };
    io::write_json(&w.path("curves.json"), &report)?;
    Ok(w.outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyReport {
    pub provenance: Provenance,
    pub theta: Theta,
    pub design: SimulationDesign,
    pub report: ScenarioReport,
}

fn cmd_simstudy(cfg: &RunConfig) -> Result<Outcome> {
    let st = cfg
        .simstudy
        .ok_or_else(|| Error::Config("missing [simstudy] section".into()))?;
    let (theta, design) = scenario(cfg)?;
    let spec = ModelSpec {
        covariates: design.layout(),
        ..cfg.model.clone()
    };
    let ci = match st.ci {
        CiKind::Hessian => CiMethod::Hessian,
        CiKind::Bootstrap => CiMethod::Bootstrap {
            replicates: st.bootstrap_replicates,
        },
    };
    let opts = StudyOptions {
        fit: FitOptions {
            objective: st.objective,
            ..cfg.fit.options()
        },
        level: st.level,
        start_at_truth: st.start_at_truth,
        ..Default::default()
    };
    let report = run_simulation_study(
        &theta,
        &design,
        &spec,
        st.replicates,
        ci,
        derive_seed(cfg.seed, "simstudy"),
        &opts,
    )?;
    let mut w = Writer::new(cfg);
    if report.n_failed > 0 {
        w.warn(format!(
            "{} of {} replicates failed",
            report.n_failed, report.n_replicates
        ));
    }
    io::write_text(&w.path("simstudy.txt"), &report.format_table())?;
    let out = SimStudyReport {
        provenance: Provenance::new(Command::Simstudy, cfg),
        theta,
        design,
        report,
    };
    io::write_json(&w.path("simstudy.json"), &out)?;
    Ok(w.outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, extra: &str) -> RunConfig {
        let text = format!("seed = 11\noutput_dir = \"{}\"\n{extra}", dir.display());
        RunConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn missing_sections_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "");
        for cmd in [
            Command::Simulate,
            Command::Fit,
            Command::Impute,
            Command::Check,
            Command::Predict,
            Command::Curves,
            Command::Simstudy,
        ] {
            let r = run(cmd, &c);
            assert!(matches!(r, Err(Error::Config(_))), "{cmd:?}: {r:?}");
            assert_eq!(exit_code(&r), EXIT_VALIDATION);
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(Outcome::default())), EXIT_OK);
        let warn = Outcome {
            files: vec![],
            warnings: vec!["x".into()],
        };
        assert_eq!(exit_code(&Ok(warn)), EXIT_WARNINGS);
        assert_eq!(exit_code(&Err(Error::DegenerateWeights)), EXIT_NUMERICAL);
    }

    #[test]
    fn simulate_and_check_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let sim = cfg(
            dir.path(),
            "[simulation]\nscenario = \"case1\"\n\
             [simulation.design]\nn_subjects = 15\ndays_per_subject = 6\n",
        );
        run(Command::Simulate, &sim).unwrap();
        let data = dir.path().join("dataset.csv");
        let first = std::fs::read(dir.path().join("simulate.json")).unwrap();
        let first_csv = std::fs::read(&data).unwrap();
        run(Command::Simulate, &sim).unwrap();
        assert_eq!(
            first,
            std::fs::read(dir.path().join("simulate.json")).unwrap()
        );
        assert_eq!(first_csv, std::fs::read(&data).unwrap());

        let out = dir.path().join("check");
        let check = cfg(
            &out,
            &format!(
                "[data]\npath = \"{}\"\n[theta]\npreset = \"case1\"\n\
                 [imputation]\nmode = {{ kind = \"full_joint\", proposals = 50 }}\n",
                data.display()
            ),
        );
        let r = run(Command::Check, &check).unwrap();
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        let report: ImputeReport =
            serde_json::from_reader(std::fs::File::open(out.join("check.json")).unwrap()).unwrap();
        let table = report.heap_fractions.unwrap();
        let direct = {
            let ds = io::load_dataset(&data, &Default::default()).unwrap();
            let (_, t) = config::preset("case1").unwrap();
            let opts = ImputationOptions {
                mode: check.imputation.mode,
                ..Default::default()
            };
            let imp = impute_latents(&[t], &ds, &opts, derive_seed(11, "impute")).unwrap();
            heap_fraction_table(&ds, Some(&imp)).unwrap()
        };
        assert_eq!(table, direct);
        let again = std::fs::read(out.join("check.json")).unwrap();
        run(Command::Check, &check).unwrap();
        assert_eq!(again, std::fs::read(out.join("check.json")).unwrap());
    }

    #[test]
    fn curves_reproduce_published_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(
            dir.path(),
            "[theta]\npreset = \"simple_re\"\n[curves]\nw_max = 45\n",
        );
        let r = run(Command::Curves, &c).unwrap();
        assert!(r.files.len() >= 6);
        let read_at = |name: &str, col: &str, w: usize| -> f64 {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            let mut rdr = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .from_reader(text.as_bytes());
            let h = rdr.headers().unwrap().clone();
            let j = h.iter().position(|x| x == col).unwrap();
            let rec = rdr.records().nth(w).unwrap().unwrap();
            rec[j].parse().unwrap()
        };
        assert!((read_at("heaping_nonvisit_marginal.csv", "heaped", 41) - 0.84).abs() < 0.02);
        assert!((read_at("heaping_visit_marginal.csv", "heaped", 41) - 0.51).abs() < 0.02);
        assert!((read_at("heaping_visit_marginal.csv", "round5", 41) - 0.39).abs() < 0.02);
    }

    #[test]
    fn predict_writes_per_day_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("reports.csv");
        std::fs::write(
            &data,
            "subject_id,day,tlfb_count,visit_day\na,1,20,0\na,2,7,0\nb,1,30,1\n",
        )
        .unwrap();
        let c = cfg(
            dir.path(),
            &format!(
                "[data]\npath = \"{}\"\n[theta]\npreset = \"simple_re\"\n\
                 [predict]\nn_imputations = 5\nx_model = {{ kind = \"poisson\", mean = 20.0 }}\n",
                data.display()
            ),
        );
        run(Command::Predict, &c).unwrap();
        let rep: PredictReport =
            serde_json::from_reader(std::fs::File::open(dir.path().join("predict.json")).unwrap())
                .unwrap();
        assert_eq!(rep.days.len(), 3);
        assert!(rep.days.iter().all(|d| d.n + rep.failures.len() >= 5));
    }
}
