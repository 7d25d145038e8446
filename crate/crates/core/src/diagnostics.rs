//! Heap-fraction tables and fitted curves: mean recalled count against the
//! true count, and rounding-class probabilities against the remembered count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::{heap_fractions, HeapFractions, ImputationResult};
use crate::model::{heaping_probs, CovariateLayout, Dataset, ModelSpec, Theta};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Plot data: one row per x value, one column per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub x_label: String,
    pub x_values: Vec<f64>,
    pub series: Vec<Series>,
    /// Fixed inputs, e.g. covariate values, as `(key, value)` pairs.
    pub metadata: Vec<(String, String)>,
}

impl CurvePoints {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallCurveMode {
    /// `E[W | x, b = 0]`.
    ConditionalB0,
    /// `E[W | x]`, averaged over `b`.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeapingCurveMode {
    /// Class probabilities averaged over `u`.
    Marginal,
    /// Class probabilities at `u = 0`.
    Conditional,
}

fn covariate_metadata(names: &[String], values: &[f64]) -> Vec<(String, String)> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| (n.clone(), format!("{v}")))
        .collect()
}

/// Mean remembered count over a range of true counts, with the identity
/// line for reference.
pub fn mean_recall_curve(
    theta: &Theta,
    layout: &CovariateLayout,
    x_range: &[u32],
    z_recall: &[f64],
    mode: RecallCurveMode,
) -> Result<CurvePoints> {
    theta.validate()?;
    if z_recall.len() != theta.beta2.len() || layout.recall.len() != theta.beta2.len() {
        return Err(Error::DimensionMismatch {
            what: "z_recall",
            expected: theta.beta2.len(),
            found: z_recall.len(),
        });
    }
    if x_range.is_empty() || x_range.contains(&0) {
        return Err(Error::InvalidInput(
            "x_range must be non-empty positive counts".into(),
        ));
    }
    let zb: f64 = z_recall.iter().zip(&theta.beta2).map(|(z, c)| z * c).sum();
    let factor = match mode {
        RecallCurveMode::ConditionalB0 => 1.0,
        RecallCurveMode::Marginal => (0.5 * theta.sigma_b * theta.sigma_b).exp(),
    };
    let mean = x_range
        .iter()
        .map(|&x| (theta.beta0 + theta.beta1 * (x as f64).ln() + zb).exp() * factor)
        .collect();
    let mut metadata = covariate_metadata(&layout.recall, z_recall);
    metadata.push((
        "mode".into(),
        match mode {
            RecallCurveMode::ConditionalB0 => "conditional_b0",
            RecallCurveMode::Marginal => "marginal",
        }
        .into(),
    ));
    Ok(CurvePoints {
        x_label: "ema_count".into(),
        x_values: x_range.iter().map(|&x| x as f64).collect(),
        series: vec![
            Series {
                name: "mean_recall".into(),
                values: mean,
            },
            Series {
                name: "identity".into(),
                values: x_range.iter().map(|&x| x as f64).collect(),
            },
        ],
        metadata,
    })
}

/// Points where the curve crosses the identity line, by linear interpolation
/// between consecutive x values.
pub fn identity_crossings(curve: &CurvePoints) -> Vec<f64> {
    let Some(m) = curve.series("mean_recall") else {
        return vec![];
    };
    let x = &curve.x_values;
    let d: Vec<f64> = m.iter().zip(x).map(|(m, x)| m - x).collect();
    let mut out = vec![];
    for i in 1..d.len() {
        if d[i - 1] == 0.0 {
            out.push(x[i - 1]);
        } else if d[i - 1] * d[i] < 0.0 {
            out.push(x[i - 1] + (x[i] - x[i - 1]) * d[i - 1] / (d[i - 1] - d[i]));
        }
    }
    if d.last() == Some(&0.0) {
        out.push(*x.last().unwrap());
    }
    out
}

/// Rounding-class probabilities against the remembered count. `z_heaping`
/// holds the person-level heaping covariates in layout order; the
/// `visit_day` slot, if the layout has one, is overwritten from `visit`.
pub fn marginal_heaping_curve(
    theta: &Theta,
    layout: &CovariateLayout,
    w_range: &[u32],
    z_heaping: &[f64],
    visit: bool,
    quad: &QuadratureRule,
    mode: HeapingCurveMode,
) -> Result<CurvePoints> {
    theta.validate()?;
    if z_heaping.len() != theta.beta3.len() || layout.heaping.len() != theta.beta3.len() {
        return Err(Error::DimensionMismatch {
            what: "z_heaping",
            expected: theta.beta3.len(),
            found: z_heaping.len(),
        });
    }
    if w_range.is_empty() {
        return Err(Error::InvalidInput("w_range is empty".into()));
    }
    let mut row = z_heaping.to_vec();
    match layout.heaping_visit_slot() {
        Some(k) => row[k] = if visit { 1.0 } else { 0.0 },
        None if visit => {
            return Err(Error::InvalidInput(
                "visit-day curve requested but the heaping model has no visit_day covariate".into(),
            ))
        }
        None => {}
    }
    let zb: f64 = row.iter().zip(&theta.beta3).map(|(z, c)| z * c).sum();
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(w_range.len())).collect();
    for &w in w_range {
        let lin = w as f64 * theta.gamma0 + zb;
        let p = match mode {
            HeapingCurveMode::Conditional => heaping_probs(theta, lin),
            HeapingCurveMode::Marginal => {
                let mut acc = [0.0; 4];
                for (&z, &wt) in quad.nodes.iter().zip(&quad.weights) {
                    let q = heaping_probs(theta, lin + theta.sigma_u * z);
                    for k in 0..4 {
                        acc[k] += wt * q[k];
                    }
                }
                acc
            }
        };
        for k in 0..4 {
            cols[k].push(p[k]);
        }
        cols[4].push(1.0 - p[0]);
    }
    let names = ["exact", "round5", "round10", "round20", "heaped"];
    let mut metadata = covariate_metadata(&layout.heaping, &row);
    metadata.push(("visit_day".into(), visit.to_string()));
    metadata.push((
        "mode".into(),
        match mode {
            HeapingCurveMode::Marginal => "marginal",
            HeapingCurveMode::Conditional => "conditional",
        }
        .into(),
    ));
    Ok(CurvePoints {
        x_label: "remembered_count".into(),
        x_values: w_range.iter().map(|&w| w as f64).collect(),
        series: names
            .iter()
            .zip(cols)
            .map(|(n, values)| Series {
                name: n.to_string(),
                values,
            })
            .collect(),
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapFractionRow {
    /// `None` for the overall row.
    pub day_index: Option<u32>,
    pub base: u32,
    pub observed: f64,
    pub n_observed: usize,
    pub imputed: Option<f64>,
    pub n_imputed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapFractionTable {
    pub rows: Vec<HeapFractionRow>,
}

impl HeapFractionTable {
    pub fn overall(&self, base: u32) -> Option<&HeapFractionRow> {
        self.rows
            .iter()
            .find(|r| r.base == base && r.day_index.is_none())
    }
}

/// Divisibility fractions of reported counts, and of imputed remembered
/// counts when given, per day index and overall, for bases 5, 10 and 20.
pub fn heap_fraction_table(
    dataset: &Dataset,
    imputations: Option<&ImputationResult>,
) -> Result<HeapFractionTable> {
    let mut rows = vec![];
    for base in [5, 10, 20] {
        let obs = heap_fractions(
            dataset.days().map(|(_, d)| (d.day_index, d.tlfb_count)),
            base,
        )?;
        let imp: Option<HeapFractions> = match imputations {
            Some(r) if !r.imputations.is_empty() => {
                Some(crate::imputation::imputed_heap_fractions(r, base)?)
            }
            _ => None,
        };
        rows.push(HeapFractionRow {
            day_index: None,
            base,
            observed: obs.overall,
            n_observed: obs.n,
            imputed: imp.as_ref().map(|i| i.overall),
            n_imputed: imp.as_ref().map(|i| i.n),
        });
        for &(day, frac, n) in &obs.by_day {
            let m = imp
                .as_ref()
                .and_then(|i| i.by_day.iter().find(|r| r.0 == day));
            rows.push(HeapFractionRow {
                day_index: Some(day),
                base,
                observed: frac,
                n_observed: n,
                imputed: m.map(|r| r.1),
                n_imputed: m.map(|r| r.2),
            });
        }
    }
    Ok(HeapFractionTable { rows })
}

/// Recall covariates of the expanded model, in coefficient order.
pub const EXPANDED_RECALL_COVARIATES: [&str; 9] = [
    "addicted_possible",
    "addicted_probable",
    "ftnd",
    "ndss",
    "ema_compliance",
    "age",
    "race_black",
    "sex_male",
    "education",
];

/// Published fit of the model with the true count as the only recall
/// predictor and a visit-day heaping covariate.
pub fn simple_model_fit(random_effects: bool) -> (ModelSpec, Theta) {
    let mut spec = ModelSpec::with_covariates(&[], &[crate::model::VISIT_DAY]);
    spec.random_effects = random_effects;
    let theta = if random_effects {
        Theta {
            beta0: 2.32,
            beta1: 0.27,
            beta2: vec![],
            sigma_b: 0.09f64.sqrt(),
            gamma1: -1.50,
            gamma2: -5.21,
            gamma3: -10.15,
            gamma0: 0.11,
            beta3: vec![-2.96],
            sigma_u: 6.65f64.sqrt(),
        }
    } else {
        Theta {
            beta0: 1.14,
            beta1: 0.68,
            beta2: vec![],
            sigma_b: 0.0,
            gamma1: -1.06,
            gamma2: -2.94,
            gamma3: -4.17,
            gamma0: 0.07,
            beta3: vec![-1.29],
            sigma_u: 0.0,
        }
    };
    (spec, theta)
}

/// Published fit of the model with person-level recall covariates
/// ([`EXPANDED_RECALL_COVARIATES`]).
pub fn expanded_model_fit(random_effects: bool) -> (ModelSpec, Theta) {
    let mut spec =
        ModelSpec::with_covariates(&EXPANDED_RECALL_COVARIATES, &[crate::model::VISIT_DAY]);
    spec.random_effects = random_effects;
    let theta = if random_effects {
        Theta {
            beta0: 2.34,
            beta1: 0.25,
            beta2: vec![0.07, -0.01, 0.06, 0.08, 0.13, 0.002, -0.14, 0.16, -0.001],
            sigma_b: 0.06f64.sqrt(),
            gamma1: -1.62,
            gamma2: -5.52,
            gamma3: -10.31,
            gamma0: 0.11,
            beta3: vec![-2.99],
            sigma_u: 6.79f64.sqrt(),
        }
    } else {
        Theta {
            beta0: 1.51,
            beta1: 0.53,
            beta2: vec![0.05, -0.02, 0.04, 0.05, 0.39, 0.003, -0.06, 0.12, 0.003],
            sigma_b: 0.0,
            gamma1: -1.14,
            gamma2: -3.15,
            gamma3: -4.54,
            gamma0: 0.07,
            beta3: vec![-1.26],
            sigma_u: 0.0,
        }
    };
    (spec, theta)
}

/// Reference covariate profile for the recall curve of the expanded model:
/// reference levels of the categorical predictors (definitely addicted,
/// white, female, high school) and sample means of the quantitative ones.
/// The published coefficients are only consistent with covariates centred
/// at their means, so every entry is zero.
pub fn reference_recall_profile() -> Vec<f64> {
    vec![0.0; EXPANDED_RECALL_COVARIATES.len()]
}
