//! CSV readers and writers: cohorts, fitted models, model comparisons,
//! prediction curves and simulation study reports.
//!
//! Floating-point values are written in Rust's shortest round-trip form, so
//! every file read back through this module reproduces the written values.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::estimation::{confidence_intervals, FitResult, M4Selection};
use crate::likelihood::PatientRecord;
use crate::params::{Model, ModelParams, ParamError};
use crate::simulation::{Dropout, ParamMetrics, StudyReport};
use crate::{FrailtyLaw, YearPolicy};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: column `{column}`: cannot parse `{value}`")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: status must be 0 or 1, got `{value}`")]
    Status { line: u64, value: String },
    #[error("line {line}: {reason}")]
    Invalid { line: u64, reason: String },
    #[error("missing entry `{0}`")]
    MissingEntry(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// `(value - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnTransform {
    pub center: f64,
    pub scale: f64,
}

impl Default for ColumnTransform {
    fn default() -> Self {
        Self { center: 0.0, scale: 1.0 }
    }
}

impl ColumnTransform {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }
}

/// Column roles of a cohort file.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortColumns {
    pub time: String,
    pub status: String,
    pub age: String,
    pub year: String,
    /// Excess-hazard covariates with their transforms.
    pub x: Vec<(String, ColumnTransform)>,
    /// Life-table strata columns, matched positionally to the table's.
    pub z: Vec<String>,
}

impl Default for CohortColumns {
    fn default() -> Self {
        Self {
            time: "time".into(),
            status: "status".into(),
            age: "age".into(),
            year: "year".into(),
            x: Vec::new(),
            z: Vec::new(),
        }
    }
}

impl CohortColumns {
    pub fn x_names(&self) -> Vec<String> {
        self.x.iter().map(|(n, _)| n.clone()).collect()
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_f64(record: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64, IoError> {
    let raw = &record[col];
    raw.parse::<f64>().map_err(|_| IoError::Parse {
        line,
        column: name.to_string(),
        value: raw.to_string(),
    })
}

fn column_index(header: &csv::StringRecord, name: &str) -> Result<usize, IoError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| IoError::MissingColumn(name.to_string()))
}

/// Reads a patient cohort. Status accepts `0`/`1` (also `true`/`false`).
pub fn read_cohort<R: Read>(r: R, cols: &CohortColumns) -> Result<Vec<PatientRecord>, IoError> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    let time = column_index(&header, &cols.time)?;
    let status = column_index(&header, &cols.status)?;
    let age = column_index(&header, &cols.age)?;
    let year = column_index(&header, &cols.year)?;
    let x = cols
        .x
        .iter()
        .map(|(n, t)| Ok((column_index(&header, n)?, n.as_str(), *t)))
        .collect::<Result<Vec<_>, IoError>>()?;
    let z = cols
        .z
        .iter()
        .map(|n| column_index(&header, n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let t = parse_f64(&record, time, &cols.time, line)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(IoError::Invalid {
                line,
                reason: format!("follow-up time must be positive, got {t}"),
            });
        }
        let status = match &record[status] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IoError::Status {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let xs = x
            .iter()
            .map(|&(c, n, tr)| parse_f64(&record, c, n, line).map(|v| tr.apply(v)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(PatientRecord {
            time: t,
            status,
            age_diag: parse_f64(&record, age, &cols.age, line)?,
            year_diag: parse_f64(&record, year, &cols.year, line)?,
            x: xs,
            z: z.iter().map(|&c| record[c].to_string()).collect(),
        });
    }
    Ok(out)
}

/// Writes `time,status,age,year,<x>..,<z>..` with already transformed `x`.
pub fn write_cohort<W: Write, S: AsRef<str>>(
    w: W,
    records: &[PatientRecord],
    x_names: &[S],
    z_names: &[S],
) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["time", "status", "age", "year"];
    header.extend(x_names.iter().map(AsRef::as_ref));
    header.extend(z_names.iter().map(AsRef::as_ref));
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.time.to_string(),
            (r.status as u8).to_string(),
            r.age_diag.to_string(),
            r.year_diag.to_string(),
        ];
        row.extend(r.x.iter().map(f64::to_string));
        row.extend(r.z.iter().cloned());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One parameter row of a fit file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Contents of a fit file.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub model: Model,
    pub params: Vec<ParamRow>,
    pub loglik: f64,
    pub loglik_comparable: f64,
    pub aic: f64,
    pub converged: bool,
}

impl FitRecord {
    pub fn from_fit(fit: &FitResult, level: f64) -> Self {
        let ci = confidence_intervals(fit, level).ok();
        let params = fit
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| ParamRow {
                name: name.clone(),
                estimate: fit.estimates[j],
                std_error: fit.std_errors.as_ref().map_or(f64::NAN, |s| s[j]),
                ci_lo: ci.as_ref().map_or(f64::NAN, |c| c[j].0),
                ci_hi: ci.as_ref().map_or(f64::NAN, |c| c[j].1),
            })
            .collect();
        Self {
            model: fit.model,
            params,
            loglik: fit.loglik,
            loglik_comparable: fit.loglik_comparable,
            aic: fit.aic,
            converged: fit.converged,
        }
    }

    /// Covariate names recovered from the `beta1_<name>` rows.
    pub fn covariate_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter_map(|r| r.name.strip_prefix("beta1_").map(str::to_string))
            .collect()
    }

    pub fn model_params(&self) -> Result<ModelParams, IoError> {
        let p = self.covariate_names().len();
        let est: Vec<f64> = self.params.iter().map(|r| r.estimate).collect();
        Ok(ModelParams::from_natural(self.model, p, &est)?)
    }
}

const FOOTER_KEYS: [&str; 5] = ["loglik", "loglik_comparable", "aic", "converged", "model"];

/// `name,estimate,std_error,ci_lo,ci_hi` rows followed by footer rows
/// `loglik`, `loglik_comparable`, `aic`, `converged` and `model` whose value
/// sits in the `estimate` column. Unavailable values are written as `NaN`.
pub fn write_fit<W: Write>(w: W, rec: &FitRecord) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["name", "estimate", "std_error", "ci_lo", "ci_hi"])?;
    for r in &rec.params {
        wtr.write_record([
            r.name.clone(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
        ])?;
    }
    let footer = [
        rec.loglik.to_string(),
        rec.loglik_comparable.to_string(),
        rec.aic.to_string(),
        rec.converged.to_string(),
        rec.model.to_string(),
    ];
    for (k, v) in FOOTER_KEYS.iter().zip(footer) {
        wtr.write_record([k.to_string(), v, String::new(), String::new(), String::new()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_fit<R: Read>(r: R) -> Result<FitRecord, IoError> {
    let mut rdr = reader(r);
    let mut params = Vec::new();
    let mut footer: Vec<Option<String>> = vec![None; FOOTER_KEYS.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(IoError::Invalid {
                line,
                reason: "expected at least two fields".into(),
            });
        }
        if let Some(k) = FOOTER_KEYS.iter().position(|k| *k == &record[0]) {
            footer[k] = Some(record[1].to_string());
            continue;
        }
        if record.len() != 5 {
            return Err(IoError::Invalid {
                line,
                reason: format!("expected 5 fields, found {}", record.len()),
            });
        }
        params.push(ParamRow {
            name: record[0].to_string(),
            estimate: parse_f64(&record, 1, "estimate", line)?,
            std_error: parse_f64(&record, 2, "std_error", line)?,
            ci_lo: parse_f64(&record, 3, "ci_lo", line)?,
            ci_hi: parse_f64(&record, 4, "ci_hi", line)?,
        });
    }
    let get = |k: usize| footer[k].clone().ok_or_else(|| IoError::MissingEntry(FOOTER_KEYS[k].to_string()));
    let num = |k: usize| -> Result<f64, IoError> {
        let v = get(k)?;
        v.parse().map_err(|_| IoError::Parse {
            line: 0,
            column: FOOTER_KEYS[k].to_string(),
            value: v,
        })
    };
    let converged = match get(3)?.as_str() {
        "true" => true,
        "false" => false,
        v => {
            return Err(IoError::Parse {
                line: 0,
                column: "converged".into(),
                value: v.to_string(),
            })
        }
    };
    Ok(FitRecord {
        model: get(4)?.parse()?,
        params,
        loglik: num(0)?,
        loglik_comparable: num(1)?,
        aic: num(2)?,
        converged,
    })
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// `M1`, `M2`, `M3` or `m4`.
    pub label: String,
    /// For the `m4` row, the selected model; otherwise the row's own model.
    pub model: Model,
    pub n_params: usize,
    pub loglik_comparable: f64,
    pub aic: f64,
    pub delta_aic: f64,
    pub converged: bool,
    pub c_hat: f64,
}

/// Rows ranked by AIC, followed by an `m4` row for the selection (if any).
pub fn comparison_rows(fits: &[FitResult], selection: Option<&M4Selection>) -> Vec<ComparisonRow> {
    let best = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    let mut rows: Vec<ComparisonRow> = fits
        .iter()
        .map(|f| ComparisonRow {
            label: f.model.to_string(),
            model: f.model,
            n_params: f.n_params(),
            loglik_comparable: f.loglik_comparable,
            aic: f.aic,
            delta_aic: f.aic - best,
            converged: f.converged,
            c_hat: f.correction_summary(),
        })
        .collect();
    rows.sort_by(|a, b| a.aic.total_cmp(&b.aic).then(a.model.cmp(&b.model)));
    if let Some(s) = selection {
        let mut m4 = rows.iter().find(|r| r.model == s.model).cloned().expect("selected fit is listed");
        m4.label = "m4".into();
        m4.c_hat = s.c_hat;
        rows.push(m4);
    }
    rows
}

pub fn write_comparison<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["label", "model", "n_params", "loglik_comparable", "aic", "delta_aic", "converged", "c_hat"])?;
    for r in rows {
        wtr.write_record([
            r.label.clone(),
            r.model.to_string(),
            r.n_params.to_string(),
            r.loglik_comparable.to_string(),
            r.aic.to_string(),
            r.delta_aic.to_string(),
            r.converged.to_string(),
            r.c_hat.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_comparison<R: Read>(r: R) -> Result<Vec<ComparisonRow>, IoError> {
    let mut rdr = reader(r);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_usize = |col: usize, name: &str| {
            record[col].parse::<usize>().map_err(|_| IoError::Parse {
                line,
                column: name.into(),
                value: record[col].to_string(),
            })
        };
        out.push(ComparisonRow {
            label: record[0].to_string(),
            model: record[1].parse()?,
            n_params: parse_usize(2, "n_params")?,
            loglik_comparable: parse_f64(&record, 3, "loglik_comparable", line)?,
            aic: parse_f64(&record, 4, "aic", line)?,
            delta_aic: parse_f64(&record, 5, "delta_aic", line)?,
            converged: &record[6] == "true",
            c_hat: parse_f64(&record, 7, "c_hat", line)?,
        });
    }
    Ok(out)
}

/// One row of a prediction curve file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub profile_id: usize,
    pub excess_hazard: f64,
    pub net_survival: f64,
}

pub fn write_curves<W: Write>(w: W, points: &[CurvePoint]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "profile_id", "excess_hazard", "net_survival"])?;
    for p in points {
        wtr.write_record([
            p.t.to_string(),
            p.profile_id.to_string(),
            p.excess_hazard.to_string(),
            p.net_survival.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curves<R: Read>(r: R) -> Result<Vec<CurvePoint>, IoError> {
    let mut rdr = reader(r);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        out.push(CurvePoint {
            t: parse_f64(&record, 0, "t", line)?,
            profile_id: record[1].parse().map_err(|_| IoError::Parse {
                line,
                column: "profile_id".into(),
                value: record[1].to_string(),
            })?,
            excess_hazard: parse_f64(&record, 2, "excess_hazard", line)?,
            net_survival: parse_f64(&record, 3, "net_survival", line)?,
        });
    }
    Ok(out)
}

pub const METRICS_HEADER: [&str; 8] = ["param", "truth", "mmle", "mmedian", "esd", "mean_se", "rmse", "coverage"];

pub fn write_metrics<W: Write>(w: W, rows: &[ParamMetrics]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(METRICS_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.name.clone(),
            r.truth.to_string(),
            r.mmle.to_string(),
            r.mmedian.to_string(),
            r.esd.to_string(),
            r.mean_se.to_string(),
            r.rmse.to_string(),
            r.coverage.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<ParamMetrics>, IoError> {
    let mut rdr = reader(r);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let f = |c: usize| parse_f64(&record, c, METRICS_HEADER[c], line);
        out.push(ParamMetrics {
            name: record[0].to_string(),
            truth: f(1)?,
            mmle: f(2)?,
            mmedian: f(3)?,
            esd: f(4)?,
            mean_se: f(5)?,
            rmse: f(6)?,
            coverage: f(7)?,
        });
    }
    Ok(out)
}

/// One row of `selection.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub model: String,
    pub selected: usize,
    pub proportion: f64,
    pub included: usize,
    pub failures: usize,
}

pub fn selection_rows(report: &StudyReport) -> Vec<SelectionRow> {
    report
        .models
        .iter()
        .map(|m| {
            let (selected, proportion) = match m.label.parse::<Model>() {
                Ok(model) => (report.selected[model as usize], report.selection_proportion(model)),
                Err(_) => (report.selected.iter().sum(), f64::NAN),
            };
            SelectionRow {
                model: m.label.clone(),
                selected,
                proportion,
                included: m.included,
                failures: m.failures,
            }
        })
        .collect()
}

pub fn write_selection<W: Write>(w: W, rows: &[SelectionRow]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "selected", "proportion", "included", "failures"])?;
    for r in rows {
        wtr.write_record([
            r.model.clone(),
            r.selected.to_string(),
            r.proportion.to_string(),
            r.included.to_string(),
            r.failures.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_selection<R: Read>(r: R) -> Result<Vec<SelectionRow>, IoError> {
    let mut rdr = reader(r);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let u = |c: usize, name: &str| {
            record[c].parse::<usize>().map_err(|_| IoError::Parse {
                line,
                column: name.into(),
                value: record[c].to_string(),
            })
        };
        out.push(SelectionRow {
            model: record[0].to_string(),
            selected: u(1, "selected")?,
            proportion: parse_f64(&record, 2, "proportion", line)?,
            included: u(3, "included")?,
            failures: u(4, "failures")?,
        });
    }
    Ok(out)
}

fn frailty_description(law: &FrailtyLaw) -> String {
    match law {
        FrailtyLaw::None => "none".into(),
        FrailtyLaw::Gamma(g) => format!("gamma(mu={}, b={})", g.mu, g.b),
        FrailtyLaw::LogNormal(l) => format!("lognormal(m={}, s={})", l.m, l.s),
    }
}

fn toml_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Key-value manifest of a study (valid TOML). `wall_time_s`, when given,
/// is the last line.
pub fn manifest(report: &StudyReport, wall_time_s: Option<f64>) -> String {
    let sc = &report.scenario;
    let mut s = String::new();
    let q = |v: &str| format!("{v:?}");
    let vec = |v: &[f64]| format!("[{}]", v.iter().map(|x| toml_float(*x)).collect::<Vec<_>>().join(", "));
    let _ = writeln!(s, "scenario = {}", q(&sc.name));
    let _ = writeln!(s, "n = {}", sc.n);
    let _ = writeln!(s, "replicates = {}", sc.replicates);
    let _ = writeln!(s, "seed = {}", sc.seed);
    let _ = writeln!(s, "multistarts = {}", sc.multistarts);
    let _ = writeln!(s, "frailty = {}", q(&frailty_description(&sc.frailty)));
    let b = sc.truth.baseline;
    let _ = writeln!(s, "kappa = {}", toml_float(b.kappa));
    let _ = writeln!(s, "theta = {}", toml_float(b.theta));
    let _ = writeln!(s, "alpha = {}", toml_float(b.alpha));
    let _ = writeln!(s, "beta1 = {}", vec(&sc.truth.beta1));
    let _ = writeln!(s, "beta2 = {}", vec(&sc.truth.beta2));
    let _ = writeln!(s, "age_center = {}", toml_float(sc.age_transform.center));
    let _ = writeln!(s, "age_scale = {}", toml_float(sc.age_transform.scale));
    let _ = writeln!(s, "diagnosis_year = {}", toml_float(sc.diagnosis_year));
    let policy = match sc.year_policy {
        YearPolicy::Advancing => "advancing",
        YearPolicy::Frozen => "frozen",
    };
    let _ = writeln!(s, "year_policy = {}", q(policy));
    let _ = writeln!(s, "admin_horizon = {}", toml_float(sc.censoring.horizon));
    let dropout = match sc.censoring.dropout {
        Dropout::None => "none".to_string(),
        Dropout::Rate(r) => format!("rate {r}"),
        Dropout::TargetProportion(p) => format!("target {p}"),
    };
    let _ = writeln!(s, "dropout = {}", q(&dropout));
    let _ = writeln!(s, "dropout_rate = {}", toml_float(report.dropout_rate.unwrap_or(0.0)));
    let _ = writeln!(s, "pilot_censoring = {}", toml_float(report.pilot_censoring.unwrap_or(f64::NAN)));
    let _ = writeln!(s, "mean_censoring = {}", toml_float(report.mean_censoring));
    if let Some(t) = wall_time_s {
        let _ = writeln!(s, "wall_time_s = {}", toml_float(t));
    }
    s
}

pub const REPORT_FILES: [&str; 6] = ["m1.csv", "m2.csv", "m3.csv", "m4.csv", "selection.csv", "manifest.toml"];

fn create(path: &Path) -> Result<fs::File, IoError> {
    fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the six report files of a study into `dir` (created if needed).
pub fn write_study_report(dir: &Path, report: &StudyReport, wall_time_s: Option<f64>) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (m, file) in report.models.iter().zip(&REPORT_FILES[..4]) {
        let path = dir.join(file);
        write_metrics(create(&path)?, &m.rows)?;
        written.push(path);
    }
    let path = dir.join(REPORT_FILES[4]);
    write_selection(create(&path)?, &selection_rows(report))?;
    written.push(path);
    let path = dir.join(REPORT_FILES[5]);
    create(&path)?.write_all(manifest(report, wall_time_s).as_bytes())?;
    written.push(path);
    Ok(written)
}
