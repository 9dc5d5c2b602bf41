//! Synthetic cohorts and replicate studies of parameter recovery.
//!
//! Each patient gets an age from a three-piece uniform mixture, binary `sex`
//! and `w`, a frailty draw that multiplies the background hazard, an
//! other-cause time from the life table, an excess time from the GH model,
//! optional exponential drop-out, and administrative censoring.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::distributions::{EwParams, FrailtyLaw, GammaFrailtyParams, LogNormalFrailtyParams};
use crate::estimation::{confidence_intervals, fit_models, normal_quantile, select_m4, FitConfig, FitResult};
use crate::gh::{GhError, GhParams};
use crate::lifetable::{LifeTable, LifeTableError, YearPolicy};
use crate::likelihood::{LikelihoodError, PatientRecord, PreparedCohort};
use crate::params::{parameter_names, Model};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("censoring target {target:.3} unreachable (achievable range {low:.3}..{high:.3})")]
    TargetUnreachable { target: f64, low: f64, high: f64 },
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error(transparent)]
    Gh(#[from] GhError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Age covariate transform `(age - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeTransform {
    pub center: f64,
    pub scale: f64,
}

impl AgeTransform {
    pub fn apply(&self, age: f64) -> f64 {
        (age - self.center) / self.scale
    }
}

impl Default for AgeTransform {
    fn default() -> Self {
        Self {
            center: 70.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    None,
    /// Exponential drop-out with a fixed rate.
    Rate(f64),
    /// Exponential drop-out calibrated to an overall censoring proportion.
    TargetProportion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Censoring {
    /// Administrative censoring horizon in years.
    pub horizon: f64,
    pub dropout: Dropout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub replicates: usize,
    pub truth: GhParams,
    pub frailty: FrailtyLaw,
    pub censoring: Censoring,
    pub age_transform: AgeTransform,
    pub diagnosis_year: f64,
    pub year_policy: YearPolicy,
    pub seed: u64,
    /// Extra random starts per fit.
    pub multistarts: usize,
}

pub const COVARIATE_NAMES: [&str; 3] = ["age", "sex", "w"];

/// Excess hazard truth used by the Design-I scenarios.
pub fn design_one_truth() -> GhParams {
    GhParams {
        baseline: EwParams {
            kappa: 0.6,
            theta: 1.75,
            alpha: 2.5,
        },
        beta1: vec![0.1, 0.1, 0.1],
        beta2: vec![0.05, 0.2, 0.25],
    }
}

impl ScenarioConfig {
    /// Design-I defaults with the given frailty law and censoring.
    pub fn design_one(name: &str, frailty: FrailtyLaw, dropout: Dropout) -> Self {
        Self {
            name: name.to_string(),
            n: 5000,
            replicates: 1000,
            truth: design_one_truth(),
            frailty,
            censoring: Censoring { horizon: 5.0, dropout },
            age_transform: AgeTransform::default(),
            diagnosis_year: REFERENCE_YEAR as f64,
            year_policy: YearPolicy::Advancing,
            seed: 1,
            multistarts: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.replicates == 0 {
            return bad("replicate count must be at least 1");
        }
        if !(self.censoring.horizon > 0.0) {
            return bad("administrative horizon must be positive");
        }
        if self.truth.dim() != COVARIATE_NAMES.len() {
            return bad("truth must have one coefficient per covariate (age, sex, w)");
        }
        if !(self.age_transform.scale > 0.0) {
            return bad("age scale must be positive");
        }
        match self.censoring.dropout {
            Dropout::Rate(r) if !(r >= 0.0 && r.is_finite()) => bad("drop-out rate must be non-negative"),
            Dropout::TargetProportion(p) if !(p > 0.0 && p < 1.0) => bad("censoring target must lie in (0, 1)"),
            _ => Ok(()),
        }
    }

    /// True value of each M1/M2/M3 parameter, in layout order.
    pub fn truth_for(&self, model: Model) -> Vec<f64> {
        let b = self.truth.baseline;
        let mut v = vec![b.kappa, b.theta, b.alpha];
        v.extend(&self.truth.beta1);
        v.extend(&self.truth.beta2);
        let mean = self.frailty.mean();
        match model {
            Model::M1 => {}
            Model::M2 => v.push(mean),
            Model::M3 => {
                // Gamma moment match for non-Gamma laws; b = 0 without frailty.
                let b = match self.frailty {
                    FrailtyLaw::Gamma(g) => g.b,
                    other => other.variance() / mean,
                };
                v.push(mean);
                v.push(b);
            }
        }
        v
    }
}

/// Eight Design-I presets (four frailty laws, with and without drop-out)
/// plus a lognormal misspecification preset.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let laws = [
        ("none", FrailtyLaw::None),
        ("moderate", FrailtyLaw::Gamma(GammaFrailtyParams { mu: 1.2, b: 0.02 })),
        ("severe", FrailtyLaw::Gamma(GammaFrailtyParams { mu: 1.875, b: 0.075 })),
        ("wide", FrailtyLaw::Gamma(GammaFrailtyParams { mu: 6.5, b: 10.0 })),
    ];
    let mut out = Vec::new();
    for (name, law) in laws {
        out.push(ScenarioConfig::design_one(name, law, Dropout::TargetProportion(0.30)));
    }
    for (name, law) in laws {
        out.push(ScenarioConfig::design_one(&format!("{name}-admin"), law, Dropout::None));
    }
    // Moment-matched to Ga(6.5, 10) by default; (m, s) are user settable.
    let s2 = (1.0f64 + 65.0 / (6.5 * 6.5)).ln();
    let ln = LogNormalFrailtyParams {
        m: 6.5f64.ln() - 0.5 * s2,
        s: s2.sqrt(),
    };
    out.push(ScenarioConfig::design_one(
        "lognormal",
        FrailtyLaw::LogNormal(ln),
        Dropout::TargetProportion(0.30),
    ));
    out
}

pub fn find_scenario(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

/// Gompertz-Makeham background mortality resembling the national table of
/// England and Wales around 2000: ages 0-100, years 1990-2030, `sex` 0
/// (women) and 1 (men), with 1.5% yearly improvement.
pub fn reference_life_table() -> LifeTable {
    LifeTable::from_fn(
        vec!["sex".into()],
        vec![vec!["0".into()], vec!["1".into()]],
        (0, 100),
        (1990, 2030),
        |age, year, s| {
            let (makeham, level, slope) = if s[0] == "1" {
                (6e-4, -10.50, 0.102)
            } else {
                (3e-4, -11.15, 0.1054)
            };
            let a = age as f64 + 0.5;
            let trend = (-0.015 * (year - REFERENCE_YEAR) as f64).exp();
            ((makeham + (level + slope * a).exp()) * trend).min(1.0)
        },
    )
    .expect("reference table is complete")
}

/// Calendar year at which [`reference_life_table`] is anchored; also the
/// Design-I diagnosis year.
pub const REFERENCE_YEAR: i32 = 2000;

/// Covariates drawn for one patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateDraw {
    pub age: f64,
    pub sex: u8,
    pub w: u8,
}

impl CovariateDraw {
    pub fn x(&self, t: &AgeTransform) -> Vec<f64> {
        vec![t.apply(self.age), self.sex as f64, self.w as f64]
    }

    pub fn z(&self) -> Vec<String> {
        vec![self.sex.to_string()]
    }
}

/// Age ~ 0.25 U(30,65) + 0.35 U(65,75) + 0.40 U(75,85); sex, w ~ Bernoulli(0.5).
pub fn draw_covariates<R: Rng + ?Sized>(rng: &mut R) -> CovariateDraw {
    let c: f64 = rng.random();
    let (lo, hi) = if c < 0.25 {
        (30.0, 65.0)
    } else if c < 0.60 {
        (65.0, 75.0)
    } else {
        (75.0, 85.0)
    };
    let u: f64 = rng.random();
    CovariateDraw {
        age: lo + (hi - lo) * u,
        sex: rng.random_bool(0.5) as u8,
        w: rng.random_bool(0.5) as u8,
    }
}

pub fn generate_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<CovariateDraw> {
    (0..n).map(|_| draw_covariates(rng)).collect()
}

/// Latent event times of one simulated patient.
#[derive(Debug, Clone, Copy)]
struct LatentTimes {
    other_cause: f64,
    excess: f64,
    /// Unit-rate exponential; drop-out time is this divided by the rate.
    dropout_unit: f64,
}

fn draw_patient<R: Rng + ?Sized>(
    sc: &ScenarioConfig,
    table: &LifeTable,
    rng: &mut R,
) -> Result<(CovariateDraw, LatentTimes), SimulationError> {
    let cov = draw_covariates(rng);
    let frailty = sc.frailty.sample(rng);
    let u_other: f64 = rng.random();
    let u_excess: f64 = rng.random();
    let u_drop: f64 = rng.random();
    let entry = table
        .stratum(&cov.z())
        .map(|stratum| crate::lifetable::LexisPosition {
            age: cov.age,
            year: sc.diagnosis_year,
            stratum,
            year_policy: sc.year_policy,
        })?;
    // 1 - u avoids ln(0); both are uniform on (0, 1].
    let target = -(1.0 - u_other).ln() / frailty;
    let other_cause = if target.is_finite() {
        table.time_to_cum_hazard(&entry, target)?
    } else {
        f64::INFINITY
    };
    let excess = sc
        .truth
        .inverse_excess_survival(1.0 - u_excess, &cov.x(&sc.age_transform))?;
    Ok((
        cov,
        LatentTimes {
            other_cause,
            excess,
            dropout_unit: -(1.0 - u_drop).ln(),
        },
    ))
}

fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

/// Simulated cohort for replicate `index` (RNG seed `sc.seed + index`).
pub fn generate_cohort(
    sc: &ScenarioConfig,
    index: usize,
    table: &LifeTable,
    dropout_rate: Option<f64>,
) -> Result<Vec<PatientRecord>, SimulationError> {
    let mut rng = replicate_rng(sc.seed, index);
    (0..sc.n)
        .map(|_| {
            let (cov, lat) = draw_patient(sc, table, &mut rng)?;
            let dropout = match dropout_rate {
                Some(r) if r > 0.0 => lat.dropout_unit / r,
                _ => f64::INFINITY,
            };
            let event = lat.other_cause.min(lat.excess);
            let censor = dropout.min(sc.censoring.horizon);
            Ok(PatientRecord {
                time: event.min(censor),
                status: event < censor,
                age_diag: cov.age,
                year_diag: sc.diagnosis_year,
                x: cov.x(&sc.age_transform),
                z: cov.z(),
            })
        })
        .collect()
}

/// Pilot sample of (event time, unit drop-out) pairs with common random
/// numbers, so censoring is monotone in the drop-out rate.
#[derive(Debug, Clone)]
pub struct DropoutPilot {
    horizon: f64,
    samples: Vec<(f64, f64)>,
}

impl DropoutPilot {
    pub fn new(sc: &ScenarioConfig, table: &LifeTable, size: usize, seed: u64) -> Result<Self, SimulationError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..size)
            .map(|_| {
                let (_, lat) = draw_patient(sc, table, &mut rng)?;
                Ok((lat.other_cause.min(lat.excess), lat.dropout_unit))
            })
            .collect::<Result<_, SimulationError>>()?;
        Ok(Self {
            horizon: sc.censoring.horizon,
            samples,
        })
    }

    /// Censored fraction with drop-out rate `rate` (0 = administrative only).
    pub fn censoring_proportion(&self, rate: f64) -> f64 {
        let censored = self
            .samples
            .iter()
            .filter(|&&(event, unit)| {
                let dropout = if rate > 0.0 { unit / rate } else { f64::INFINITY };
                dropout.min(self.horizon) <= event
            })
            .count();
        censored as f64 / self.samples.len() as f64
    }
}

pub const PILOT_SIZE: usize = 100_000;
const CALIBRATION_TOL: f64 = 0.005;

/// Bisection on the drop-out rate over `[1e-6, 10]` (log scale) until the
/// pilot's censoring is within half a percentage point of `target`.
/// Returns the rate and the achieved proportion.
pub fn calibrate_dropout_rate(pilot: &DropoutPilot, target: f64) -> Result<(f64, f64), SimulationError> {
    let (mut lo, mut hi) = (1e-6f64, 10.0f64);
    let low = pilot.censoring_proportion(0.0);
    let high = pilot.censoring_proportion(hi);
    if low > target + CALIBRATION_TOL || high < target - CALIBRATION_TOL {
        return Err(SimulationError::TargetUnreachable { target, low, high });
    }
    let mut rate = (lo * hi).sqrt();
    let mut achieved = pilot.censoring_proportion(rate);
    for _ in 0..200 {
        if (achieved - target).abs() <= CALIBRATION_TOL {
            break;
        }
        if achieved < target {
            lo = rate;
        } else {
            hi = rate;
        }
        rate = (lo * hi).sqrt();
        achieved = pilot.censoring_proportion(rate);
    }
    Ok((rate, achieved))
}

/// Per-replicate record of one model's fit.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub estimates: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub loglik: f64,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            estimates: f.estimates.clone(),
            std_errors: f.std_errors.clone(),
            converged: f.converged,
            gradient_norm: f.gradient_norm,
            loglik: f.loglik,
        }
    }
}

#[derive(Debug, Clone)]
pub struct M4Outcome {
    pub model: Model,
    pub c_hat: f64,
    /// Excess-hazard estimates and standard errors of the chosen fit.
    pub estimates: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub censoring: f64,
    /// M1, M2, M3 in order; `None` when the fit raised an error.
    pub fits: [Option<FitSummary>; 3],
    pub m4: Option<M4Outcome>,
}

pub fn run_replicate(
    sc: &ScenarioConfig,
    table: &LifeTable,
    dropout_rate: Option<f64>,
    index: usize,
) -> Result<ReplicateOutcome, SimulationError> {
    let records = generate_cohort(sc, index, table, dropout_rate)?;
    let censoring = records.iter().filter(|r| !r.status).count() as f64 / records.len() as f64;
    let cohort = PreparedCohort::new(&records, table, sc.year_policy)?;
    let mut cfg = FitConfig::new(Model::M1);
    cfg.multistarts = sc.multistarts;
    cfg.seed = sc.seed.wrapping_add(index as u64);
    cfg.covariate_names = Some(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect());
    let results = fit_models(&cohort, &Model::ALL, &cfg);
    let mut fits: [Option<FitSummary>; 3] = [None, None, None];
    let mut ok: Vec<FitResult> = Vec::new();
    for (model, r) in results {
        match r {
            Ok(f) => {
                fits[model as usize] = Some(FitSummary::from(&f));
                ok.push(f);
            }
            Err(e) => log::warn!("replicate {index}: {model} failed: {e}"),
        }
    }
    let psi = 3 + 2 * sc.truth.dim();
    let m4 = select_m4(&ok).ok().map(|s| {
        let chosen = &ok[s.index];
        M4Outcome {
            model: s.model,
            c_hat: s.c_hat,
            estimates: chosen.estimates[..psi].to_vec(),
            std_errors: chosen.std_errors.as_ref().map(|se| se[..psi].to_vec()),
        }
    });
    Ok(ReplicateOutcome {
        index,
        censoring,
        fits,
        m4,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMetrics {
    pub name: String,
    pub truth: f64,
    pub mmle: f64,
    pub mmedian: f64,
    pub esd: f64,
    pub mean_se: f64,
    pub rmse: f64,
    pub coverage: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Summary of estimates of one parameter across replicates. `ses` holds the
/// estimated standard error of each replicate where one is available.
pub fn param_metrics(name: &str, truth: f64, estimates: &[f64], ses: &[Option<f64>], z: f64) -> ParamMetrics {
    let n = estimates.len() as f64;
    let mmle = estimates.iter().sum::<f64>() / n;
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let esd = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mmle).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n).sqrt();
    let with_se: Vec<(f64, f64)> = estimates
        .iter()
        .zip(ses)
        .filter_map(|(&e, s)| s.map(|s| (e, s)))
        .collect();
    let (mean_se, coverage) = if with_se.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = with_se.len() as f64;
        let covered = with_se
            .iter()
            .filter(|&&(e, s)| e - z * s <= truth && truth <= e + z * s)
            .count();
        (with_se.iter().map(|p| p.1).sum::<f64>() / m, covered as f64 / m)
    };
    ParamMetrics {
        name: name.to_string(),
        truth,
        mmle,
        mmedian: median(&sorted),
        esd,
        mean_se,
        rmse,
        coverage,
    }
}

#[derive(Debug, Clone)]
pub struct ModelMetrics {
    pub label: String,
    pub rows: Vec<ParamMetrics>,
    /// Replicates entering the metrics.
    pub included: usize,
    /// Replicates excluded (fit error or not converged).
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub scenario: ScenarioConfig,
    pub dropout_rate: Option<f64>,
    pub pilot_censoring: Option<f64>,
    pub mean_censoring: f64,
    /// M1, M2, M3, M4.
    pub models: Vec<ModelMetrics>,
    /// Number of replicates in which AIC chose M1, M2, M3.
    pub selected: [usize; 3],
    pub replicates: Vec<ReplicateOutcome>,
}

impl StudyReport {
    pub fn model(&self, label: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.label == label)
    }

    pub fn row(&self, label: &str, param: &str) -> Option<&ParamMetrics> {
        self.model(label)?.rows.iter().find(|r| r.name == param)
    }

    pub fn selection_proportion(&self, model: Model) -> f64 {
        let total: usize = self.selected.iter().sum();
        if total == 0 {
            f64::NAN
        } else {
            self.selected[model as usize] as f64 / total as f64
        }
    }
}

fn model_metrics(sc: &ScenarioConfig, model: Model, outcomes: &[ReplicateOutcome], z: f64) -> ModelMetrics {
    let names = parameter_names(model, &COVARIATE_NAMES);
    let truth = sc.truth_for(model);
    let fits: Vec<&FitSummary> = outcomes
        .iter()
        .filter_map(|o| o.fits[model as usize].as_ref())
        .filter(|f| f.converged)
        .collect();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let est: Vec<f64> = fits.iter().map(|f| f.estimates[j]).collect();
            let ses: Vec<Option<f64>> = fits.iter().map(|f| f.std_errors.as_ref().map(|s| s[j])).collect();
            param_metrics(name, truth[j], &est, &ses, z)
        })
        .collect();
    ModelMetrics {
        label: model.to_string(),
        rows,
        included: fits.len(),
        failures: outcomes.len() - fits.len(),
    }
}

fn m4_metrics(sc: &ScenarioConfig, outcomes: &[ReplicateOutcome], z: f64) -> ModelMetrics {
    let names = parameter_names(Model::M1, &COVARIATE_NAMES);
    let truth = sc.truth_for(Model::M1);
    let chosen: Vec<&M4Outcome> = outcomes.iter().filter_map(|o| o.m4.as_ref()).collect();
    let mut rows: Vec<ParamMetrics> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let est: Vec<f64> = chosen.iter().map(|m| m.estimates[j]).collect();
            let ses: Vec<Option<f64>> = chosen.iter().map(|m| m.std_errors.as_ref().map(|s| s[j])).collect();
            param_metrics(name, truth[j], &est, &ses, z)
        })
        .collect();
    let c: Vec<f64> = chosen.iter().map(|m| m.c_hat).collect();
    rows.push(param_metrics("c", sc.frailty.mean(), &c, &vec![None; c.len()], z));
    ModelMetrics {
        label: "M4".into(),
        rows,
        included: chosen.len(),
        failures: outcomes.len() - chosen.len(),
    }
}

/// Drop-out rate for the scenario: fixed, calibrated, or none.
pub fn resolve_dropout(sc: &ScenarioConfig, table: &LifeTable) -> Result<(Option<f64>, Option<f64>), SimulationError> {
    match sc.censoring.dropout {
        Dropout::None => Ok((None, None)),
        Dropout::Rate(r) => Ok((Some(r), None)),
        Dropout::TargetProportion(target) => {
            let pilot = DropoutPilot::new(sc, table, PILOT_SIZE, sc.seed ^ 0x9E37_79B9_7F4A_7C15)?;
            let (rate, achieved) = calibrate_dropout_rate(&pilot, target)?;
            Ok((Some(rate), Some(achieved)))
        }
    }
}

/// Runs every replicate (on `jobs` worker threads) and summarises M1-M4.
/// Results do not depend on `jobs`.
pub fn run_study(sc: &ScenarioConfig, table: &LifeTable, jobs: usize) -> Result<StudyReport, SimulationError> {
    sc.validate()?;
    let (dropout_rate, pilot_censoring) = resolve_dropout(sc, table)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimulationError::ThreadPool(e.to_string()))?;
    let started = Instant::now();
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        (0..sc.replicates)
            .into_par_iter()
            .map(|i| run_replicate(sc, table, dropout_rate, i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    log::info!(
        "{}: {} replicates in {:.1}s",
        sc.name,
        sc.replicates,
        started.elapsed().as_secs_f64()
    );
    Ok(summarise(sc, dropout_rate, pilot_censoring, outcomes))
}

pub fn summarise(
    sc: &ScenarioConfig,
    dropout_rate: Option<f64>,
    pilot_censoring: Option<f64>,
    outcomes: Vec<ReplicateOutcome>,
) -> StudyReport {
    let z = normal_quantile(0.95).expect("valid level");
    let mut models: Vec<ModelMetrics> = Model::ALL.iter().map(|&m| model_metrics(sc, m, &outcomes, z)).collect();
    models.push(m4_metrics(sc, &outcomes, z));
    let mut selected = [0usize; 3];
    for o in &outcomes {
        if let Some(m) = &o.m4 {
            selected[m.model as usize] += 1;
        }
    }
    let mean_censoring = outcomes.iter().map(|o| o.censoring).sum::<f64>() / outcomes.len().max(1) as f64;
    StudyReport {
        scenario: sc.clone(),
        dropout_rate,
        pilot_censoring,
        mean_censoring,
        models,
        selected,
        replicates: outcomes,
    }
}

/// Wald coverage check used by the study: does the natural-scale interval
/// of `fit` at `level` contain `truth[j]` for each parameter?
pub fn covers(fit: &FitResult, truth: &[f64], level: f64) -> Option<Vec<bool>> {
    let ci = confidence_intervals(fit, level).ok()?;
    Some(ci.iter().zip(truth).map(|(&(lo, hi), &t)| lo <= t && t <= hi).collect())
}
