//! TOML run configuration.
//!
//! ```toml
//! seed = 20240101
//! output_dir = "out"
//!
//! [model]
//! recall = []
//! heaping = ["visit_day"]
//!
//! [data]
//! path = "data.csv"
//! ```
//!
//! Every section is optional at parse time; each command checks for the
//! sections it needs before doing any work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, Objective};
use crate::imputation::{ImputationMode, TrueCountModel};
use crate::model::{ModelSpec, Theta};
use crate::optim::BfgsOptions;
use crate::simulation::{self, SimulationDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 keeps the default.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub model: ModelSpec,
    pub data: Option<DataConfig>,
    pub theta: Option<ThetaConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub imputation: ImputationConfig,
    pub simulation: Option<SimulationConfig>,
    pub simstudy: Option<SimStudyConfig>,
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub curves: CurvesConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
}

/// Where parameter values come from. Exactly one field must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    /// A fit result; its `theta_hat` is used.
    pub fit_file: Option<PathBuf>,
    /// A JSON array of parameter vectors, e.g. resampled posterior draws.
    pub draws_file: Option<PathBuf>,
    /// `case1`, `case2`, `simple_re`, `simple_independence`, `expanded_re`
    /// or `expanded_independence`.
    pub preset: Option<String>,
    pub value: Option<Theta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub objective: Objective,
    pub max_iter: usize,
    pub f_rel_tol: f64,
    pub grad_tol: f64,
    pub grad_step: f64,
    pub hessian_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let b = BfgsOptions::default();
        let f = FitOptions::default();
        FitConfig {
            objective: f.objective,
            max_iter: b.max_iter,
            f_rel_tol: b.f_rel_tol,
            grad_tol: b.grad_tol,
            grad_step: b.grad_step,
            hessian_step: f.hessian_step,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            objective: self.objective,
            bfgs: BfgsOptions {
                max_iter: self.max_iter,
                f_rel_tol: self.f_rel_tol,
                grad_tol: self.grad_tol,
                grad_step: self.grad_step,
                ..BfgsOptions::default()
            },
            hessian_step: self.hessian_step,
            ..FitOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "fit.{name} must be positive, got {v}"
                )))
            }
        };
        if self.max_iter == 0 {
            return Err(Error::Config("fit.max_iter must be at least 1".into()));
        }
        pos("f_rel_tol", self.f_rel_tol)?;
        pos("grad_tol", self.grad_tol)?;
        pos("grad_step", self.grad_step)?;
        pos("hessian_step", self.hessian_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub proposals: usize,
    pub resample: usize,
    pub df: f64,
    pub level: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            proposals: 4000,
            resample: 1000,
            df: 5.0,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationConfig {
    pub mode: ImputationMode,
    pub max_rejects: u64,
    /// Use at most this many parameter vectors from a draws file.
    pub max_draws: Option<usize>,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            mode: ImputationMode::PriorEffects,
            max_rejects: 1_000_000,
            max_draws: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// `case1`, `case2` or `custom` (parameters from `[theta]`).
    pub scenario: String,
    /// Overrides the scenario's design when present.
    pub design: Option<SimulationDesign>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiKind {
    Hessian,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimStudyConfig {
    pub replicates: usize,
    #[serde(default = "default_ci")]
    pub ci: CiKind,
    #[serde(default = "default_boot")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub start_at_truth: bool,
    /// Objective of each replicate fit. Maximum likelihood by default, so
    /// the variance priors do not enter the bias and coverage figures.
    #[serde(default = "default_study_objective")]
    pub objective: Objective,
}

fn default_study_objective() -> Objective {
    Objective::Likelihood
}

fn default_ci() -> CiKind {
    CiKind::Hessian
}
fn default_boot() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub x_model: TrueCountModel,
    #[serde(default = "default_imputations")]
    pub n_imputations: usize,
}

fn default_imputations() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    pub x_max: u32,
    pub w_max: u32,
    pub nodes: usize,
    /// Person-level recall covariates; zeros when empty.
    pub recall_profile: Vec<f64>,
    /// Person-level heaping covariates (the `visit_day` slot is ignored);
    /// zeros when empty.
    pub heaping_profile: Vec<f64>,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig {
            x_max: 60,
            w_max: 60,
            nodes: 40,
            recall_profile: vec![],
            heaping_profile: vec![],
        }
    }
}

/// Parameters of a named preset, with the model structure they belong to.
pub fn preset(name: &str) -> Result<(ModelSpec, Theta)> {
    let sim = |(t, d): (Theta, SimulationDesign)| {
        let spec = ModelSpec {
            covariates: d.layout(),
            ..ModelSpec::default()
        };
        (spec, t)
    };
    Ok(match name {
        "case1" => sim(simulation::scenario_case1()),
        "case2" => sim(simulation::scenario_case2()),
        "simple_re" => diagnostics::simple_model_fit(true),
        "simple_independence" => diagnostics::simple_model_fit(false),
        "expanded_re" => diagnostics::expanded_model_fit(true),
        "expanded_independence" => diagnostics::expanded_model_fit(false),
        other => return Err(Error::Config(format!("unknown preset '{other}'"))),
    })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a file; relative paths inside are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(d) = &mut self.data {
            fix(&mut d.path);
        }
        if let Some(t) = &mut self.theta {
            t.fit_file.as_mut().map(fix);
            t.draws_file.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.fit.validate()?;
        let s = &self.sampler;
        if s.proposals < 2 || s.resample < 1 {
            return Err(Error::Config(
                "sampler.proposals must be >= 2 and sampler.resample >= 1".into(),
            ));
        }
        if !(s.df > 0.0 && s.df.is_finite()) {
            return Err(Error::Config(format!(
                "sampler.df must be positive, got {}",
                s.df
            )));
        }
        check_level("sampler.level", s.level)?;
        if self.imputation.max_rejects == 0 {
            return Err(Error::Config(
                "imputation.max_rejects must be at least 1".into(),
            ));
        }
        if let ImputationMode::FullJoint { proposals } = self.imputation.mode {
            if proposals == 0 {
                return Err(Error::Config(
                    "imputation.mode.proposals must be at least 1".into(),
                ));
            }
        }
        if self.imputation.max_draws == Some(0) {
            return Err(Error::Config(
                "imputation.max_draws must be at least 1".into(),
            ));
        }
        if let Some(t) = &self.theta {
            let set = [
                t.fit_file.is_some(),
                t.draws_file.is_some(),
                t.preset.is_some(),
                t.value.is_some(),
            ];
            if set.iter().filter(|&&b| b).count() != 1 {
                return Err(Error::Config(
                    "[theta] needs exactly one of fit_file, draws_file, preset, value".into(),
                ));
            }
            if let Some(p) = &t.preset {
                preset(p)?;
            }
            if let Some(v) = &t.value {
                v.validate_for(&self.model)?;
            }
        }
        if let Some(sim) = &self.simulation {
            if !["case1", "case2", "custom"].contains(&sim.scenario.as_str()) {
                return Err(Error::Config(format!(
                    "simulation.scenario must be case1, case2 or custom, got '{}'",
                    sim.scenario
                )));
            }
            if let Some(d) = &sim.design {
                d.validate()?;
            }
        }
        if let Some(st) = &self.simstudy {
            if st.replicates < 2 {
                return Err(Error::Config(
                    "simstudy.replicates must be at least 2".into(),
                ));
            }
            if st.ci == CiKind::Bootstrap && st.bootstrap_replicates < 50 {
                return Err(Error::Config(
                    "simstudy.bootstrap_replicates must be at least 50".into(),
                ));
            }
            check_level("simstudy.level", st.level)?;
        }
        if let Some(p) = &self.predict {
            p.x_model.validate()?;
            if p.n_imputations == 0 {
                return Err(Error::Config(
                    "predict.n_imputations must be at least 1".into(),
                ));
            }
        }
        let c = &self.curves;
        if c.x_max < 1 || c.nodes < 1 || c.nodes > crate::quadrature::MAX_NODES {
            return Err(Error::Config(format!(
                "curves.x_max must be >= 1 and curves.nodes in 1..={}",
                crate::quadrature::MAX_NODES
            )));
        }
        Ok(())
    }

    /// Canonical serialisation used for hashing and provenance.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn require_data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("missing [data] section with path".into()))
    }

    pub fn require_theta(&self) -> Result<&ThetaConfig> {
        self.theta.as_ref().ok_or_else(|| {
            Error::Config("missing [theta] section (fit_file, draws_file, preset or value)".into())
        })
    }
}

fn check_level(name: &str, level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must lie in (0, 1), got {level}"
        )))
    }
}
