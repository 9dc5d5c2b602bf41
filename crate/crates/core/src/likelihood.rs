//! Overall hazard, marginal survival and exact log-likelihoods for the
//! three background-mortality models.
//!
//! With `hP` the background rate at exit and `dHP` the background cumulative
//! hazard accrued during follow-up, the observed hazard is
//!
//! - M1: `hP + h_E`
//! - M2: `gamma hP + h_E`
//! - M3: `mu hP / (1 + b dHP) + h_E`
//!
//! and the log-likelihood is `sum_i [d_i ln h_obs,i - H_E,i] + pop`, with the
//! population term `0` (M1), `-gamma sum dHP` (M2) and
//! `-(mu/b) sum ln(1 + b dHP)` (M3). M1 drops the parameter-free
//! `exp(-dHP)` factor, so its value is not on the same scale as M2/M3; use
//! [`comparable_loglik`] before comparing across models.

use thiserror::Error;

use crate::distributions::GammaFrailtyParams;
use crate::gh::{dot, GhError, GhParams};
use crate::lifetable::{LexisPosition, LifeTable, LifeTableError, YearPolicy};
use crate::params::{Correction, Model, ModelParams, ParamError};

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("non-finite log-likelihood contribution from patient {index}")]
    NonFiniteLikelihood { index: usize },
    #[error("patient {index}: {source}")]
    LifeTable {
        index: usize,
        #[source]
        source: LifeTableError,
    },
    #[error("patient {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("parameters have {got} covariates, cohort has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gh(#[from] GhError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    /// Follow-up time in years.
    pub time: f64,
    /// `true` for a death, `false` for a censored observation.
    pub status: bool,
    pub age_diag: f64,
    pub year_diag: f64,
    /// Excess-hazard covariates.
    pub x: Vec<f64>,
    /// Life-table strata values.
    pub z: Vec<String>,
}

impl PatientRecord {
    pub fn entry(&self, table: &LifeTable, policy: YearPolicy) -> Result<LexisPosition, LifeTableError> {
        Ok(LexisPosition::new(table, self.age_diag, self.year_diag, &self.z)?.with_year_policy(policy))
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Cohort with the life-table inputs cached: the background rate at exit
/// and the background cumulative hazard over follow-up.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    p: usize,
    time: Vec<f64>,
    ln_time: Vec<f64>,
    status: Vec<bool>,
    x: Vec<f64>,
    hp: Vec<f64>,
    dhp: Vec<f64>,
    sum_dhp: f64,
}

impl PreparedCohort {
    pub fn new(records: &[PatientRecord], table: &LifeTable, policy: YearPolicy) -> Result<Self, LikelihoodError> {
        let mut hp = Vec::with_capacity(records.len());
        let mut dhp = Vec::with_capacity(records.len());
        for (index, r) in records.iter().enumerate() {
            let entry = r
                .entry(table, policy)
                .map_err(|source| LikelihoodError::LifeTable { index, source })?;
            hp.push(table.rate_at(&entry.advanced(r.time)));
            dhp.push(table.cum_hazard_increment(&entry, r.time));
        }
        Self::from_parts(records, hp, dhp)
    }

    /// Builds a cohort from precomputed background quantities.
    pub fn from_parts(records: &[PatientRecord], hp: Vec<f64>, dhp: Vec<f64>) -> Result<Self, LikelihoodError> {
        if records.is_empty() {
            return Err(LikelihoodError::EmptyCohort);
        }
        let p = records[0].x.len();
        let mut x = Vec::with_capacity(records.len() * p);
        for (index, r) in records.iter().enumerate() {
            let bad = |reason: String| LikelihoodError::InvalidRecord { index, reason };
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(bad(format!("follow-up time {} must be positive", r.time)));
            }
            if r.x.len() != p {
                return Err(bad(format!("{} covariates, expected {p}", r.x.len())));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite covariate".into()));
            }
            if !(hp[index].is_finite() && hp[index] >= 0.0 && dhp[index].is_finite() && dhp[index] >= 0.0) {
                return Err(bad("invalid background hazard".into()));
            }
            x.extend(&r.x);
        }
        let mut sum = KahanSum::default();
        dhp.iter().for_each(|&d| sum.add(d));
        Ok(Self {
            p,
            time: records.iter().map(|r| r.time).collect(),
            ln_time: records.iter().map(|r| r.time.ln()).collect(),
            status: records.iter().map(|r| r.status).collect(),
            x,
            hp,
            dhp,
            sum_dhp: sum.value(),
        })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn events(&self) -> usize {
        self.status.iter().filter(|&&d| d).count()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn background_rate(&self) -> &[f64] {
        &self.hp
    }

    pub fn background_cum_hazard(&self) -> &[f64] {
        &self.dhp
    }

    /// `sum_i dHP_i`, the constant M1 leaves out of its likelihood.
    pub fn sum_background_cum_hazard(&self) -> f64 {
        self.sum_dhp
    }
}

/// Frailty correction factor `mu / (1 + b dHP)`.
pub fn omega1(dhp: f64, g: &GammaFrailtyParams) -> f64 {
    g.mu / (1.0 + g.b * dhp)
}

/// Population part of the observed hazard.
fn population_hazard(correction: &Correction, hp: f64, dhp: f64) -> f64 {
    match *correction {
        Correction::None => hp,
        Correction::Single { gamma } => gamma * hp,
        Correction::Frailty(g) => omega1(dhp, &g) * hp,
    }
}

/// Log of the population survival factor.
fn population_log_survival(correction: &Correction, dhp: f64) -> f64 {
    match *correction {
        Correction::None => -dhp,
        Correction::Single { gamma } => -gamma * dhp,
        Correction::Frailty(g) => -g.shape() * (g.b * dhp).ln_1p(),
    }
}

/// Observed (marginal) hazard at follow-up time `t`.
pub fn overall_hazard(params: &ModelParams, t: f64, x: &[f64], hp: f64, dhp: f64) -> Result<f64, GhError> {
    Ok(population_hazard(&params.correction, hp, dhp) + params.gh.excess_hazard(t, x)?)
}

/// M3 marginal overall survival `exp(-H_E) / (1 + b dHP)^(mu/b)`.
pub fn marginal_survival_m3(
    t: f64,
    rec: &PatientRecord,
    gh: &GhParams,
    frailty: &GammaFrailtyParams,
    table: &LifeTable,
) -> Result<f64, LikelihoodError> {
    let entry = rec
        .entry(table, YearPolicy::Advancing)
        .map_err(|source| LikelihoodError::LifeTable { index: 0, source })?;
    let dhp = table.cum_hazard_increment(&entry, t);
    Ok(gh.net_survival(t, &rec.x)? * frailty.laplace(dhp))
}

/// Per-model log-likelihood (M1 without the background survival constant).
pub fn loglik(params: &ModelParams, cohort: &PreparedCohort) -> Result<f64, LikelihoodError> {
    let z = params.to_transformed()?;
    let mut kernel = Kernel::new(params.model(), cohort, &z)?;
    kernel.evaluate(None)
}

/// Log-likelihood on the full-data convention shared by all three models.
pub fn comparable_loglik(model: Model, loglik: f64, cohort: &PreparedCohort) -> f64 {
    match model {
        Model::M1 => loglik - cohort.sum_background_cum_hazard(),
        Model::M2 | Model::M3 => loglik,
    }
}

/// Log-likelihood and its gradient with respect to the transformed
/// parameter vector (see [`crate::params`] for the layout).
pub fn loglik_transformed(
    model: Model,
    z: &[f64],
    cohort: &PreparedCohort,
    grad: Option<&mut [f64]>,
) -> Result<f64, LikelihoodError> {
    let mut kernel = Kernel::new(model, cohort, z)?;
    kernel.evaluate(grad)
}

struct Kernel<'a> {
    cohort: &'a PreparedCohort,
    params: ModelParams,
    ln_theta: f64,
}

impl<'a> Kernel<'a> {
    fn new(model: Model, cohort: &'a PreparedCohort, z: &[f64]) -> Result<Self, LikelihoodError> {
        let params = ModelParams::from_transformed(model, cohort.p, z)?;
        if params.gh.dim() != cohort.p {
            return Err(LikelihoodError::DimensionMismatch {
                expected: cohort.p,
                got: params.gh.dim(),
            });
        }
        Ok(Self {
            cohort,
            ln_theta: z[1],
            params,
        })
    }

    fn evaluate(&mut self, mut grad: Option<&mut [f64]>) -> Result<f64, LikelihoodError> {
        let c = self.cohort;
        let p = c.p;
        let gh = &self.params.gh;
        let ew = gh.baseline;
        let corr = self.params.correction;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = KahanSum::default();
        for i in 0..c.len() {
            let x = c.covariates(i);
            let xb1 = dot(x, &gh.beta1);
            let xb2 = dot(x, &gh.beta2);
            let w = c.ln_time[i] + xb1 - self.ln_theta;
            let terms = ew.terms(self.ln_theta, w);
            let h_e = (terms.log_hazard + xb2).exp();
            let ec = (xb2 - xb1).exp();
            let cum_e = -terms.log_surv * ec;
            let (hp, dhp) = (c.hp[i], c.dhp[i]);
            let pop_hazard = population_hazard(&corr, hp, dhp);
            let pop_log_surv = match corr {
                // M1 omits the population survival factor.
                Correction::None => 0.0,
                _ => population_log_survival(&corr, dhp),
            };
            let delta = c.status[i];
            let h_obs = pop_hazard + h_e;
            let mut term = pop_log_surv - cum_e;
            if delta {
                if !(h_obs > 0.0) {
                    return Err(LikelihoodError::NonFiniteLikelihood { index: i });
                }
                term += h_obs.ln();
            }
            if !term.is_finite() {
                return Err(LikelihoodError::NonFiniteLikelihood { index: i });
            }
            total.add(term);

            let Some(g) = grad.as_deref_mut() else { continue };
            let (we, wp) = if delta { (h_e / h_obs, pop_hazard / h_obs) } else { (0.0, 0.0) };
            g[0] += we * terms.dlh_dk + ec * terms.dls_dk;
            g[1] += we * (-1.0 - terms.dlh_dw) - ec * terms.dls_dw;
            g[2] += we * terms.dlh_da + ec * terms.dls_da;
            let d_beta1 = we * terms.dlh_dw + ec * (terms.dls_dw - terms.log_surv);
            let d_beta2 = we - cum_e;
            for (j, &xj) in x.iter().enumerate() {
                g[3 + j] += xj * d_beta1;
                g[3 + p + j] += xj * d_beta2;
            }
            let k = 3 + 2 * p;
            match corr {
                Correction::None => {}
                Correction::Single { .. } => g[k] += wp + pop_log_surv,
                Correction::Frailty(fr) => {
                    let bd = fr.b * dhp;
                    let frac = bd / (1.0 + bd);
                    g[k] += wp + pop_log_surv;
                    g[k + 1] += -wp * frac + fr.shape() * bd.ln_1p() - fr.mu * dhp / (1.0 + bd);
                }
            }
        }
        if let Some(g) = grad.as_deref() {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(LikelihoodError::NonFiniteLikelihood { index });
            }
        }
        Ok(total.value())
    }
}
