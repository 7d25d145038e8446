//! Domain types and the exact probability primitives of the recall/heaping
//! model: the coarsening map and its inverse, the Poisson recall mean, the
//! proportional-odds rounding distribution and the per-day observation
//! probability given the two subject effects.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Covariate name that is resolved per day from the visit flag rather than
/// from the subject-level covariate columns.
pub const VISIT_DAY: &str = "visit_day";

/// Latent reporting granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeapingClass {
    Exact = 1,
    Nearest5 = 2,
    Nearest10 = 3,
    Nearest20 = 4,
}

impl HeapingClass {
    pub const ALL: [HeapingClass; 4] = [
        HeapingClass::Exact,
        HeapingClass::Nearest5,
        HeapingClass::Nearest10,
        HeapingClass::Nearest20,
    ];

    /// Rounding base: 1, 5, 10 or 20.
    pub fn base(self) -> u32 {
        match self {
            HeapingClass::Exact => 1,
            HeapingClass::Nearest5 => 5,
            HeapingClass::Nearest10 => 10,
            HeapingClass::Nearest20 => 20,
        }
    }

    /// Zero-based position, matching the layout of [`heaping_pmf`].
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(HeapingClass::Exact),
            2 => Some(HeapingClass::Nearest5),
            3 => Some(HeapingClass::Nearest10),
            4 => Some(HeapingClass::Nearest20),
            _ => None,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl fmt::Display for HeapingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HeapingClass::Exact => "exact",
            HeapingClass::Nearest5 => "round5",
            HeapingClass::Nearest10 => "round10",
            HeapingClass::Nearest20 => "round20",
        };
        f.write_str(s)
    }
}

/// Report `w` at granularity `g`. Half-way values round up, so
/// `coarsen(15, Nearest10) == 20`.
pub fn coarsen(w: u32, g: HeapingClass) -> u32 {
    let base = g.base();
    if base == 1 {
        w
    } else {
        (w + base / 2) / base * base
    }
}

/// Inclusive range of `w` that `g` maps onto `y`, if any.
fn preimage(y: u32, g: HeapingClass) -> Option<(u32, u32)> {
    let base = g.base();
    if !y.is_multiple_of(base) {
        return None;
    }
    let half = base / 2;
    Some((y.saturating_sub(half), y + (base - 1 - half)))
}

/// All `(w, g)` pairs with `coarsen(w, g) == y`, ordered by class then `w`.
pub fn inverse_coarsen(y: u32) -> Vec<(u32, HeapingClass)> {
    let mut out = Vec::new();
    for g in HeapingClass::ALL {
        if let Some((lo, hi)) = preimage(y, g) {
            out.extend((lo..=hi).map(|w| (w, g)));
        }
    }
    out
}

/// `WG(y)` laid out as a contiguous `w` window with, for each `w`, the mask of
/// classes that reproduce `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentSet {
    pub y: u32,
    pub w_lo: u32,
    pub masks: Vec<[bool; 4]>,
}

impl ConsistentSet {
    pub fn new(y: u32) -> Self {
        let mut lo = y;
        let mut hi = y;
        for g in HeapingClass::ALL {
            if let Some((a, b)) = preimage(y, g) {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        let masks = (lo..=hi)
            .map(|w| {
                let mut m = [false; 4];
                for g in HeapingClass::ALL {
                    m[g.index()] = coarsen(w, g) == y;
                }
                m
            })
            .collect();
        ConsistentSet { y, w_lo: lo, masks }
    }

    pub fn w_hi(&self) -> u32 {
        self.w_lo + self.masks.len() as u32 - 1
    }

    pub fn contains(&self, w: u32, g: HeapingClass) -> bool {
        w >= self.w_lo && w <= self.w_hi() && self.masks[(w - self.w_lo) as usize][g.index()]
    }

    pub fn len(&self) -> usize {
        self.masks
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const LN_FACTORIAL_TABLE: usize = 4096;

/// `ln(w!)`, tabulated for small `w`.
pub fn ln_factorial(w: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..LN_FACTORIAL_TABLE)
            .map(|k| ln_gamma(k as f64 + 1.0))
            .collect()
    });
    match table.get(w as usize) {
        Some(&v) => v,
        None => ln_gamma(w as f64 + 1.0),
    }
}

/// Poisson log-pmf parameterised by the log of the mean.
#[inline]
pub fn ln_poisson(w: u32, log_mean: f64) -> f64 {
    let wf = w as f64;
    let lambda = log_mean.exp();
    if w == 0 {
        -lambda
    } else {
        wf * log_mean - lambda - ln_factorial(w)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full parameter vector.
///
/// `sigma_b` and `sigma_u` are standard deviations. They are zero only in the
/// independence (no random effects) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta0: f64,
    pub beta1: f64,
    #[serde(default)]
    pub beta2: Vec<f64>,
    pub sigma_b: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma0: f64,
    #[serde(default)]
    pub beta3: Vec<f64>,
    pub sigma_u: f64,
}

impl Theta {
    /// Intercept ordering, finiteness and non-negative SDs.
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.beta0,
            self.beta1,
            self.sigma_b,
            self.gamma1,
            self.gamma2,
            self.gamma3,
            self.gamma0,
            self.sigma_u,
        ];
        if scalars
            .iter()
            .chain(&self.beta2)
            .chain(&self.beta3)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidTheta(format!("non-finite entry in {self}")));
        }
        if !(self.gamma1 > self.gamma2 && self.gamma2 > self.gamma3) {
            return Err(Error::InvalidTheta(format!(
                "intercepts must satisfy gamma1 > gamma2 > gamma3, got ({}, {}, {})",
                self.gamma1, self.gamma2, self.gamma3
            )));
        }
        if self.sigma_b < 0.0 || self.sigma_u < 0.0 {
            return Err(Error::InvalidTheta(format!(
                "random-effect SDs must be non-negative, got ({}, {})",
                self.sigma_b, self.sigma_u
            )));
        }
        Ok(())
    }

    /// [`Theta::validate`] plus covariate dimensions and, for the random
    /// effects model, strictly positive SDs.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        self.validate()?;
        check_len("beta2", spec.covariates.recall.len(), self.beta2.len())?;
        check_len("beta3", spec.covariates.heaping.len(), self.beta3.len())?;
        if spec.random_effects && !(self.sigma_b > 0.0 && self.sigma_u > 0.0) {
            return Err(Error::InvalidTheta(
                "random-effect SDs must be positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn intercepts_ordered(&self) -> bool {
        self.gamma1 > self.gamma2 && self.gamma2 > self.gamma3
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{beta0: {:.6}, beta1: {:.6}, beta2: {:?}, sigma_b: {:.6}, gamma: ({:.6}, {:.6}, {:.6}), gamma0: {:.6}, beta3: {:?}, sigma_u: {:.6}}}",
            self.beta0,
            self.beta1,
            self.beta2,
            self.sigma_b,
            self.gamma1,
            self.gamma2,
            self.gamma3,
            self.gamma0,
            self.beta3,
            self.sigma_u
        )
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// Prior hyperparameters. Regression coefficients get independent normals
/// (the EMA slope centred at `beta1_prior_mean`, everything else at zero);
/// the random-effect variances get inverse-gamma priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub beta1_prior_mean: f64,
    pub beta1_prior_sd: f64,
    pub coef_prior_sd: f64,
    pub variance_ig_shape: f64,
    pub variance_ig_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        // IG(3, 2) has mean 1 and SD 1.
        PriorConfig {
            beta1_prior_mean: 1.0,
            beta1_prior_sd: 10.0,
            coef_prior_sd: 10.0,
            variance_ig_shape: 3.0,
            variance_ig_scale: 2.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1_prior_mean.is_finite()
            && self.beta1_prior_sd > 0.0
            && self.coef_prior_sd > 0.0
            && self.variance_ig_shape > 0.0
            && self.variance_ig_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid prior configuration {self:?}"
            )))
        }
    }
}

/// Which covariates enter each model part. The reserved name
/// [`VISIT_DAY`] is taken from each day's visit flag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateLayout {
    #[serde(default)]
    pub recall: Vec<String>,
    #[serde(default)]
    pub heaping: Vec<String>,
}

impl CovariateLayout {
    pub fn new(recall: Vec<String>, heaping: Vec<String>) -> Result<Self> {
        let layout = CovariateLayout { recall, heaping };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        for (part, names) in [("recall", &self.recall), ("heaping", &self.heaping)] {
            let mut seen = HashSet::new();
            for n in names {
                if n.trim().is_empty() {
                    return Err(Error::Config(format!("empty {part} covariate name")));
                }
                if !seen.insert(n.as_str()) {
                    return Err(Error::Config(format!("duplicate {part} covariate '{n}'")));
                }
            }
        }
        Ok(())
    }

    pub fn recall_visit_slot(&self) -> Option<usize> {
        self.recall.iter().position(|n| n == VISIT_DAY)
    }

    pub fn heaping_visit_slot(&self) -> Option<usize> {
        self.heaping.iter().position(|n| n == VISIT_DAY)
    }

    /// Day-level recall covariate row.
    pub fn recall_row(&self, subject: &SubjectRecord, day: &ObservationDay) -> Vec<f64> {
        with_visit(
            &subject.z_recall,
            self.recall_visit_slot(),
            day.is_visit_day,
        )
    }

    /// Day-level heaping covariate row.
    pub fn heaping_row(&self, subject: &SubjectRecord, day: &ObservationDay) -> Vec<f64> {
        with_visit(
            &subject.z_heaping,
            self.heaping_visit_slot(),
            day.is_visit_day,
        )
    }

    pub fn recall_offset(
        &self,
        subject: &SubjectRecord,
        day: &ObservationDay,
        beta2: &[f64],
    ) -> f64 {
        offset(
            &subject.z_recall,
            beta2,
            self.recall_visit_slot(),
            day.is_visit_day,
        )
    }

    pub fn heaping_offset(
        &self,
        subject: &SubjectRecord,
        day: &ObservationDay,
        beta3: &[f64],
    ) -> f64 {
        offset(
            &subject.z_heaping,
            beta3,
            self.heaping_visit_slot(),
            day.is_visit_day,
        )
    }
}

fn with_visit(z: &[f64], slot: Option<usize>, visit: bool) -> Vec<f64> {
    let mut row = z.to_vec();
    if let Some(j) = slot {
        row[j] = if visit { 1.0 } else { 0.0 };
    }
    row
}

fn offset(z: &[f64], coef: &[f64], slot: Option<usize>, visit: bool) -> f64 {
    z.iter()
        .zip(coef)
        .enumerate()
        .map(|(j, (&zj, &c))| {
            let v = if Some(j) == slot {
                if visit {
                    1.0
                } else {
                    0.0
                }
            } else {
                zj
            };
            v * c
        })
        .sum()
}

/// Model structure shared by every estimation routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub covariates: CovariateLayout,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes_per_dim: usize,
    /// `false` fits the independence model (no subject effects).
    #[serde(default = "default_true")]
    pub random_effects: bool,
    /// Recentre the quadrature at each subject's effect mode.
    #[serde(default = "default_true")]
    pub adaptive_quadrature: bool,
    #[serde(default)]
    pub prior: PriorConfig,
}

fn default_nodes() -> usize {
    20
}

fn default_true() -> bool {
    true
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            covariates: CovariateLayout::default(),
            quadrature_nodes_per_dim: default_nodes(),
            random_effects: true,
            adaptive_quadrature: true,
            prior: PriorConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn with_covariates(recall: &[&str], heaping: &[&str]) -> Self {
        ModelSpec {
            covariates: CovariateLayout {
                recall: recall.iter().map(|s| s.to_string()).collect(),
                heaping: heaping.iter().map(|s| s.to_string()).collect(),
            },
            ..ModelSpec::default()
        }
    }

    /// The quadrature rule this specification asks for.
    pub fn quadrature(&self) -> Result<crate::quadrature::QuadratureRule> {
        let q = crate::quadrature::QuadratureRule::gauss_hermite(self.quadrature_nodes_per_dim)?;
        Ok(if self.adaptive_quadrature {
            q
        } else {
            q.fixed()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.covariates.validate()?;
        self.prior.validate()?;
        if self.quadrature_nodes_per_dim < 5 {
            return Err(Error::Config(format!(
                "quadrature_nodes_per_dim must be at least 5, got {}",
                self.quadrature_nodes_per_dim
            )));
        }
        Ok(())
    }
}

/// One observed day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationDay {
    pub day_index: u32,
    /// Instantaneously recorded (true) count, at least 1.
    pub ema_count: u32,
    /// Retrospectively reported, possibly heaped, count.
    pub tlfb_count: u32,
    pub is_visit_day: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub days: Vec<ObservationDay>,
    pub z_recall: Vec<f64>,
    pub z_heaping: Vec<f64>,
}

impl SubjectRecord {
    pub fn validate(&self, layout: &CovariateLayout) -> Result<()> {
        let ctx = |msg: String| Error::InvalidInput(format!("subject {}: {msg}", self.subject_id));
        if self.days.is_empty() {
            return Err(ctx("no observation days".into()));
        }
        if self.z_recall.len() != layout.recall.len() {
            return Err(ctx(format!(
                "{} recall covariates, expected {}",
                self.z_recall.len(),
                layout.recall.len()
            )));
        }
        if self.z_heaping.len() != layout.heaping.len() {
            return Err(ctx(format!(
                "{} heaping covariates, expected {}",
                self.z_heaping.len(),
                layout.heaping.len()
            )));
        }
        if self
            .z_recall
            .iter()
            .chain(&self.z_heaping)
            .any(|v| !v.is_finite())
        {
            return Err(ctx("non-finite covariate".into()));
        }
        for pair in self.days.windows(2) {
            if pair[1].day_index <= pair[0].day_index {
                return Err(ctx(format!(
                    "day indices not strictly increasing ({} then {})",
                    pair[0].day_index, pair[1].day_index
                )));
            }
        }
        for d in &self.days {
            if d.day_index < 1 {
                return Err(ctx("day index must be at least 1".into()));
            }
            if d.ema_count < 1 {
                return Err(ctx(format!(
                    "ema_count is 0 on day {}; zero true counts are not supported by the log-count recall model",
                    d.day_index
                )));
            }
        }
        Ok(())
    }
}

/// A validated collection of subjects sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub layout: CovariateLayout,
    pub subjects: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn new(layout: CovariateLayout, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let ds = Dataset { layout, subjects };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.subjects.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate subject id {}",
                    s.subject_id
                )));
            }
            s.validate(&self.layout)?;
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.subjects.iter().map(|s| s.days.len()).sum()
    }

    /// Every `(subject, day)` pair in order.
    pub fn days(&self) -> impl Iterator<Item = (&SubjectRecord, &ObservationDay)> {
        self.subjects
            .iter()
            .flat_map(|s| s.days.iter().map(move |d| (s, d)))
    }
}

/// `beta0 + beta1 ln(x) + z_recall . beta2 + b`: the log of the Poisson mean
/// of the remembered count.
pub fn recall_log_mean(theta: &Theta, x: u32, z_recall: &[f64], b: f64) -> Result<f64> {
    check_len("z_recall", theta.beta2.len(), z_recall.len())?;
    if x == 0 {
        return Err(Error::InvalidInput("true count must be at least 1".into()));
    }
    let zb: f64 = z_recall.iter().zip(&theta.beta2).map(|(z, c)| z * c).sum();
    Ok(theta.beta0 + theta.beta1 * (x as f64).ln() + zb + b)
}

/// Rounding-class probabilities given the full linear predictor
/// `w gamma0 + z_heaping . beta3 + u`.
#[inline]
pub fn heaping_probs(theta: &Theta, linear: f64) -> [f64; 4] {
    let a = [
        theta.gamma1 + linear,
        theta.gamma2 + linear,
        theta.gamma3 + linear,
    ];
    let lp = a.map(logistic_pair);
    [
        lp[0].1,
        pair_diff(a[1], lp[0], lp[1]),
        pair_diff(a[2], lp[1], lp[2]),
        lp[2].0,
    ]
}

/// `(logistic(x), 1 - logistic(x))` from one exponential.
#[inline]
pub(crate) fn logistic_pair(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        let e = (-x).exp();
        let d = 1.0 / (1.0 + e);
        (d, e * d)
    } else {
        let e = x.exp();
        let d = 1.0 / (1.0 + e);
        (e * d, d)
    }
}

/// `logistic(a) - logistic(b)` from precomputed pairs, `a >= b`; `b` is the
/// smaller argument.
#[inline]
pub(crate) fn pair_diff(b: f64, pa: (f64, f64), pb: (f64, f64)) -> f64 {
    let d = if b > 0.0 { pb.1 - pa.1 } else { pa.0 - pb.0 };
    d.max(0.0)
}

/// Proportional-odds distribution of the rounding class, indexed by
/// [`HeapingClass::index`].
pub fn heaping_pmf(theta: &Theta, w: u32, z_heaping: &[f64], u: f64) -> Result<[f64; 4]> {
    check_len("z_heaping", theta.beta3.len(), z_heaping.len())?;
    let zb: f64 = z_heaping.iter().zip(&theta.beta3).map(|(z, c)| z * c).sum();
    Ok(heaping_probs(theta, w as f64 * theta.gamma0 + zb + u))
}

/// `ln f(y | b, u)` summed over `WG(y)` in log space.
pub fn log_obs_prob_given_effects(
    theta: &Theta,
    day: &ObservationDay,
    z_recall: &[f64],
    z_heaping: &[f64],
    b: f64,
    u: f64,
) -> Result<f64> {
    let log_mean = recall_log_mean(theta, day.ema_count, z_recall, b)?;
    check_len("z_heaping", theta.beta3.len(), z_heaping.len())?;
    let zh: f64 = z_heaping.iter().zip(&theta.beta3).map(|(z, c)| z * c).sum();
    let terms: Vec<f64> = inverse_coarsen(day.tlfb_count)
        .into_iter()
        .map(|(w, g)| {
            let p = heaping_probs(theta, w as f64 * theta.gamma0 + zh + u)[g.index()];
            ln_poisson(w, log_mean) + p.ln()
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `f(y | b, u) = sum over WG(y) of Poisson(w) * P(g | w)`.
pub fn obs_prob_given_effects(
    theta: &Theta,
    day: &ObservationDay,
    z_recall: &[f64],
    z_heaping: &[f64],
    b: f64,
    u: f64,
) -> Result<f64> {
    log_obs_prob_given_effects(theta, day, z_recall, z_heaping, b, u).map(f64::exp)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
