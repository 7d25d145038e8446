//! Dataset CSV reading and writing, and the CSV/JSON result writers.
//!
//! Dataset schema (long format, one row per subject-day):
//!
//! ```text
//! subject_id,day,ema_count,tlfb_count,visit_day[,covariate...]
//! ```
//!
//! Covariate columns are person-level: their value must not change within a
//! subject. Only the columns named in the model's covariate layout are read.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::{CurvePoints, HeapFractionTable};
use crate::error::{Error, Result};
use crate::imputation::{ImputationResult, TrueCountResult};
use crate::model::{CovariateLayout, Dataset, ObservationDay, SubjectRecord, VISIT_DAY};
use crate::simulation::LatentTruth;

const REQUIRED: [&str; 5] = ["subject_id", "day", "ema_count", "tlfb_count", "visit_day"];

fn schema_err(source: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        path: source.to_string(),
        line: line as usize,
        message: message.into(),
    }
}

/// Read and validate a dataset file. Columns named in `layout` (other than
/// `visit_day`) must be present.
pub fn load_dataset(path: &Path, layout: &CovariateLayout) -> Result<Dataset> {
    let file = File::open(path)?;
    let ds = read_dataset(file, &path.display().to_string(), layout, true)?;
    log::info!(
        "loaded {}: {} subjects, {} days, covariates recall={:?} heaping={:?}",
        path.display(),
        ds.subjects.len(),
        ds.n_days(),
        layout.recall,
        layout.heaping
    );
    Ok(ds)
}

/// Read subjects whose true counts are unobserved. The `ema_count` column may
/// be absent or blank; it is set to 1 and ignored downstream.
pub fn load_reports(path: &Path, layout: &CovariateLayout) -> Result<Dataset> {
    let file = File::open(path)?;
    read_dataset(file, &path.display().to_string(), layout, false)
}

/// Parse a dataset from any reader. `source` names the input in errors.
pub fn read_dataset<R: Read>(
    reader: R,
    source: &str,
    layout: &CovariateLayout,
    require_ema: bool,
) -> Result<Dataset> {
    layout.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = HashMap::new();
    for name in REQUIRED {
        match col(name) {
            Some(i) => {
                idx.insert(name, i);
            }
            None if name == "ema_count" && !require_ema => {}
            None => return Err(schema_err(source, 1, format!("missing column '{name}'"))),
        }
    }
    let cov_col = |name: &String| -> Result<Option<usize>> {
        if name == VISIT_DAY {
            return Ok(None);
        }
        col(name)
            .map(Some)
            .ok_or_else(|| schema_err(source, 1, format!("missing covariate column '{name}'")))
    };
    let recall_cols: Vec<Option<usize>> =
        layout.recall.iter().map(cov_col).collect::<Result<_>>()?;
    let heaping_cols: Vec<Option<usize>> =
        layout.heaping.iter().map(cov_col).collect::<Result<_>>()?;

    struct Partial {
        days: BTreeMap<u32, (ObservationDay, u64)>,
        z_recall: Vec<f64>,
        z_heaping: Vec<f64>,
    }
    let mut order: Vec<String> = vec![];
    let mut subjects: HashMap<String, Partial> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |name: &str| -> &str { rec.get(idx[name]).unwrap_or("") };
        let count = |name: &str| -> Result<u32> {
            let v = field(name);
            v.parse::<u32>().map_err(|_| {
                schema_err(
                    source,
                    line,
                    format!("column '{name}': expected a nonnegative integer, got '{v}'"),
                )
            })
        };
        let id = field("subject_id").to_string();
        if id.is_empty() {
            return Err(schema_err(source, line, "column 'subject_id': empty"));
        }
        let day = count("day")?;
        if day == 0 {
            return Err(schema_err(source, line, "column 'day': must be at least 1"));
        }
        let ema = if require_ema {
            let e = count("ema_count")?;
            if e == 0 {
                return Err(schema_err(
                    source,
                    line,
                    "column 'ema_count': 0 is not allowed (the recall model uses ln of the true count)",
                ));
            }
            e
        } else {
            match idx.get("ema_count").map(|_| field("ema_count")) {
                Some(v) if !v.is_empty() => count("ema_count")?.max(1),
                _ => 1,
            }
        };
        let tlfb = count("tlfb_count")?;
        let visit = match field("visit_day") {
            "0" | "false" => false,
            "1" | "true" => true,
            v => {
                return Err(schema_err(
                    source,
                    line,
                    format!("column 'visit_day': expected 0 or 1, got '{v}'"),
                ))
            }
        };
        let parse_cov = |cols: &[Option<usize>], names: &[String]| -> Result<Vec<f64>> {
            cols.iter()
                .zip(names)
                .map(|(c, name)| match c {
                    None => Ok(0.0),
                    Some(i) => {
                        let v = rec.get(*i).unwrap_or("");
                        v.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| {
                                schema_err(
                                    source,
                                    line,
                                    format!("column '{name}': expected a number, got '{v}'"),
                                )
                            })
                    }
                })
                .collect()
        };
        let zr = parse_cov(&recall_cols, &layout.recall)?;
        let zh = parse_cov(&heaping_cols, &layout.heaping)?;
        let entry = subjects.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial {
                days: BTreeMap::new(),
                z_recall: zr.clone(),
                z_heaping: zh.clone(),
            }
        });
        if entry.z_recall != zr || entry.z_heaping != zh {
            return Err(schema_err(
                source,
                line,
                format!("subject '{id}': covariate values change between rows"),
            ));
        }
        let obs = ObservationDay {
            day_index: day,
            ema_count: ema,
            tlfb_count: tlfb,
            is_visit_day: visit,
        };
        if let Some((_, first)) = entry.days.insert(day, (obs, line)) {
            return Err(schema_err(
                source,
                line,
                format!(
                    "duplicate (subject_id, day) = ('{id}', {day}); first seen on line {first}"
                ),
            ));
        }
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let p = subjects.remove(&id).expect("recorded id");
            SubjectRecord {
                subject_id: id,
                days: p.days.into_values().map(|(d, _)| d).collect(),
                z_recall: p.z_recall,
                z_heaping: p.z_heaping,
            }
        })
        .collect();
    Dataset::new(layout.clone(), subjects)
}

/// Covariate columns written for `layout`: recall names then heaping names,
/// without duplicates or `visit_day`.
fn covariate_columns(layout: &CovariateLayout) -> Vec<&str> {
    let mut out: Vec<&str> = vec![];
    for n in layout.recall.iter().chain(&layout.heaping) {
        if n != VISIT_DAY && !out.contains(&n.as_str()) {
            out.push(n);
        }
    }
    out
}

fn covariate_value(layout: &CovariateLayout, s: &SubjectRecord, name: &str) -> f64 {
    if let Some(i) = layout.recall.iter().position(|n| n == name) {
        return s.z_recall[i];
    }
    let i = layout
        .heaping
        .iter()
        .position(|n| n == name)
        .expect("known column");
    s.z_heaping[i]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_dataset_to(create(path)?, dataset)
}

pub fn write_dataset_to<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let covs = covariate_columns(&dataset.layout);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(&covs);
    w.write_record(&header)?;
    for s in &dataset.subjects {
        let cov: Vec<String> = covs
            .iter()
            .map(|c| covariate_value(&dataset.layout, s, c).to_string())
            .collect();
        for d in &s.days {
            let mut row = vec![
                s.subject_id.clone(),
                d.day_index.to_string(),
                d.ema_count.to_string(),
                d.tlfb_count.to_string(),
                (d.is_visit_day as u8).to_string(),
            ];
            row.extend(cov.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Simulated latent values, one row per subject-day.
pub fn write_truth(path: &Path, truth: &[LatentTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["subject_id", "day", "w", "g", "b", "u"])?;
    for t in truth {
        for d in &t.days {
            w.write_record([
                t.subject_id.clone(),
                d.day_index.to_string(),
                d.w.to_string(),
                d.g.to_string(),
                t.b.to_string(),
                t.u.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_imputations(path: &Path, result: &ImputationResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["theta_index", "subject_id", "day", "w", "g", "b", "u"])?;
    for imp in &result.imputations {
        for ((day, wv), g) in imp.day_index.iter().zip(&imp.w).zip(&imp.g) {
            w.write_record([
                imp.theta_index.to_string(),
                imp.subject_id.clone(),
                day.to_string(),
                wv.to_string(),
                g.to_string(),
                imp.b.to_string(),
                imp.u.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, result: &TrueCountResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["imputation", "subject_id", "day", "x", "w", "g", "b", "u"])?;
    for imp in &result.imputations {
        for i in 0..imp.x.len() {
            w.write_record([
                imp.imputation_index.to_string(),
                imp.subject_id.clone(),
                imp.day_index[i].to_string(),
                imp.x[i].to_string(),
                imp.w[i].to_string(),
                imp.g[i].to_string(),
                imp.b.to_string(),
                imp.u.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot data with a leading `#` comment line listing the fixed inputs.
pub fn write_curve(path: &Path, curve: &CurvePoints) -> Result<()> {
    let mut out = create(path)?;
    let meta: Vec<String> = curve
        .metadata
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    writeln!(out, "# {}", meta.join("; "))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![curve.x_label.clone()];
    header.extend(curve.series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (i, x) in curve.x_values.iter().enumerate() {
        let mut row = vec![x.to_string()];
        row.extend(curve.series.iter().map(|s| s.values[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heap_table(path: &Path, table: &HeapFractionTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "day",
        "base",
        "observed",
        "n_observed",
        "imputed",
        "n_imputed",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &table.rows {
        w.write_record([
            r.day_index.map_or("all".to_string(), |d| d.to_string()),
            r.base.to_string(),
            r.observed.to_string(),
            r.n_observed.to_string(),
            opt(r.imputed.map(|v| v.to_string())),
            opt(r.n_imputed.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{
        generate_dataset, scenario_case2, CovariateDistribution, CovariateGenerator,
    };

    fn layout() -> CovariateLayout {
        CovariateLayout {
            recall: vec!["age".into()],
            heaping: vec![VISIT_DAY.into()],
        }
    }

    fn read(text: &str, layout: &CovariateLayout) -> Result<Dataset> {
        read_dataset(text.as_bytes(), "toy.csv", layout, true)
    }

    #[test]
    fn two_subject_toy_file() {
        let text = "subject_id,day,ema_count,tlfb_count,visit_day,age\n\
                    a,2,10,10,0,40\n\
                    a,1,12,10,1,40\n\
                    b,1,20,20,0,51.5\n";
        let ds = read(text, &layout()).unwrap();
        assert_eq!(ds.subjects.len(), 2);
        assert_eq!(ds.subjects[0].days[0].day_index, 1);
        assert!(ds.subjects[0].days[0].is_visit_day);
        assert_eq!(ds.subjects[1].z_recall, vec![51.5]);
        assert_eq!(ds.subjects[1].z_heaping, vec![0.0]);
    }

    #[test]
    fn schema_errors_name_row_and_column() {
        let l = CovariateLayout::default();
        let cases = [
            (
                "subject_id,day,ema_count,tlfb_count,visit_day\na,1,0,3,0\n",
                "ema_count",
            ),
            (
                "subject_id,day,ema_count,tlfb_count,visit_day\na,1,2,x,0\n",
                "tlfb_count",
            ),
            (
                "subject_id,day,ema_count,tlfb_count,visit_day\na,1,2,3,2\n",
                "visit_day",
            ),
            (
                "subject_id,day,ema_count,tlfb_count\na,1,2,3\n",
                "visit_day",
            ),
            (
                "subject_id,day,ema_count,tlfb_count,visit_day\na,1,2,3,0\na,1,2,3,0\n",
                "duplicate",
            ),
        ];
        for (text, needle) in cases {
            let e = read(text, &l).unwrap_err().to_string();
            assert!(e.contains(needle), "{e}");
            assert!(e.starts_with("toy.csv:"), "{e}");
        }
        let e = read(
            "subject_id,day,ema_count,tlfb_count,visit_day\na,1,2,3,0\na,2,0,3,0\n",
            &l,
        )
        .unwrap_err()
        .to_string();
        assert!(e.starts_with("toy.csv:3:"), "{e}");
        let e = read(
            "subject_id,day,ema_count,tlfb_count,visit_day\na,1,2,3,0\n",
            &layout(),
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("age"), "{e}");
        let e = read(
            "subject_id,day,ema_count,tlfb_count,visit_day,age\na,1,2,3,0,1\na,2,2,3,0,2\n",
            &layout(),
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("change"), "{e}");
    }

    #[test]
    fn reports_without_true_counts() {
        let text = "subject_id,day,tlfb_count,visit_day\na,1,20,0\n";
        let ds =
            read_dataset(text.as_bytes(), "r.csv", &CovariateLayout::default(), false).unwrap();
        assert_eq!(ds.subjects[0].days[0].ema_count, 1);
        assert!(read(text, &CovariateLayout::default()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let (t, mut d) = scenario_case2();
        d.covariates = vec![CovariateGenerator {
            name: "ftnd".into(),
            recall: true,
            heaping: true,
            distribution: CovariateDistribution::Normal { mean: 0.0, sd: 1.0 },
        }];
        d.visit_days = vec![3, 8];
        d.visit_effect_in_heaping = true;
        let mut t = t;
        t.beta2 = vec![0.1];
        t.beta3 = vec![0.2, -1.0];
        let ds = generate_dataset(&t, &d, 1).unwrap().dataset;
        let mut buf = vec![];
        write_dataset_to(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice(), "mem", &ds.layout, true).unwrap();
        assert_eq!(back, ds);
    }
}
