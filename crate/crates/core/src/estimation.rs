//! Maximum-likelihood fitting of M1/M2/M3.
//!
//! A fit runs one coordinate-descent cycle from the starting values (each
//! coordinate maximised by a bounded Brent search), then BFGS on the
//! transformed scale with the analytic gradient. Standard errors come from a
//! central-difference Hessian on the transformed scale mapped back with the
//! delta method. AIC uses the comparable log-likelihood, so the three models
//! can be ranked against each other.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

use crate::distributions::GammaFrailtyParams;
use crate::likelihood::{comparable_loglik, loglik_transformed, LikelihoodError, PreparedCohort};
use crate::optim::{bfgs, minimize_bounded, BfgsOptions};
use crate::params::{default_covariate_names, log_scale_mask, parameter_names, Correction, Model, ModelParams};

pub use crate::params::{transform_natural as transform_params, untransform};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("cohort has no events")]
    NoEvents,
    #[error("starting values are for {got}, fitting {expected}")]
    InitMismatch { expected: Model, got: Model },
    #[error("log-likelihood is not finite at the starting values: {0}")]
    BadStart(#[source] LikelihoodError),
    #[error("standard errors are unavailable for {0}")]
    SEsUnavailable(Model),
    #[error("no converged fit to select from")]
    NoEligibleFit,
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub model: Model,
    /// Starting values; `None` uses [`ModelParams::initial`].
    pub init: Option<ModelParams>,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Evaluation cap per stage (warm start, quasi-Newton).
    pub max_evals: usize,
    /// Further deterministic starts tried after `init`.
    pub extra_starts: Vec<ModelParams>,
    /// Extra randomly perturbed starts.
    pub multistarts: usize,
    pub multistart_sd: f64,
    pub seed: u64,
    pub level: f64,
    pub hessian_step: f64,
    pub covariate_names: Option<Vec<String>>,
}

impl FitConfig {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            init: None,
            extra_starts: Vec::new(),
            grad_tol: 1e-6,
            step_tol: 1e-9,
            max_evals: 2000,
            multistarts: 0,
            multistart_sd: 0.3,
            seed: 0,
            level: 0.95,
            hessian_step: 1e-4,
            covariate_names: None,
        }
    }

    pub fn for_model(&self, model: Model) -> Self {
        Self {
            model,
            init: None,
            extra_starts: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub names: Vec<String>,
    pub params: ModelParams,
    /// Natural-scale estimates in layout order.
    pub estimates: Vec<f64>,
    /// Estimates on the unconstrained scale.
    pub transformed: Vec<f64>,
    /// Natural-scale standard errors (delta method); `None` when the Hessian
    /// is not negative definite.
    pub std_errors: Option<Vec<f64>>,
    /// Covariance on the transformed scale.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub loglik_comparable: f64,
    pub aic: f64,
    pub converged: bool,
    /// Central-difference gradient max-norm at the optimum.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub n_starts: usize,
    pub best_start: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.estimates.len()
    }

    /// Correction summary: 1 for M1, `gamma` for M2, `mu` for M3.
    pub fn correction_summary(&self) -> f64 {
        match self.params.correction {
            Correction::None => 1.0,
            Correction::Single { gamma } => gamma,
            Correction::Frailty(g) => g.mu,
        }
    }
}

/// `2k - 2 l` for `k` free parameters.
pub fn aic(loglik_comparable: f64, k: usize) -> f64 {
    -2.0 * loglik_comparable + 2.0 * k as f64
}

/// Gradient threshold for accepting an optimum: `1e-3 sqrt(1 + |l|)`.
pub fn gradient_acceptance(loglik: f64) -> f64 {
    1e-3 * (1.0 + loglik.abs()).sqrt()
}

#[derive(Debug, Clone)]
pub struct CdaOutcome {
    pub params: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

/// One coordinate-ascent cycle on `objective` (maximised), in index order.
/// Coordinate `j` is searched on `[x_j - half_width[j], x_j + half_width[j]]`
/// and only moves when the objective strictly improves.
pub fn cda_warm_start<F>(mut objective: F, init: &[f64], half_width: &[f64], xtol: f64, max_evals: usize) -> Option<CdaOutcome>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut x = init.to_vec();
    let mut value = objective(&x).filter(|v| v.is_finite())?;
    let mut evaluations = 1;
    let mut warnings = Vec::new();
    let per_coordinate = (max_evals / init.len().max(1)).max(10);
    for j in 0..x.len() {
        let centre = x[j];
        let mut trial = x.clone();
        let mut failures = 0;
        let best = minimize_bounded(
            |v| {
                trial[j] = v;
                let r = objective(&trial).filter(|f| f.is_finite());
                if r.is_none() {
                    failures += 1;
                }
                r.map(|f| -f)
            },
            centre - half_width[j],
            centre + half_width[j],
            xtol,
            per_coordinate,
        );
        evaluations += best.evaluations;
        if failures > 0 {
            warnings.push(format!("coordinate {j}: {failures} non-finite evaluations skipped"));
        }
        if -best.fx > value {
            x[j] = best.x;
            value = -best.fx;
        }
    }
    Some(CdaOutcome {
        params: x,
        value,
        evaluations,
        warnings,
    })
}

struct Stage {
    z: Vec<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    evaluations: usize,
    warnings: Vec<String>,
}

fn search_widths(model: Model, cohort: &PreparedCohort) -> Vec<f64> {
    let p = cohort.dim();
    let n = cohort.len() as f64;
    let mut widths = vec![3.0; 3];
    let sd: Vec<f64> = (0..p)
        .map(|j| {
            let mean = (0..cohort.len()).map(|i| cohort.covariates(i)[j]).sum::<f64>() / n;
            let var = (0..cohort.len()).map(|i| (cohort.covariates(i)[j] - mean).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    for _ in 0..2 {
        widths.extend(sd.iter().map(|s| 3.0 / s.max(1.0)));
    }
    widths.extend(std::iter::repeat_n(3.0, model.correction_len()));
    widths
}

fn run_stage(model: Model, cohort: &PreparedCohort, start: &[f64], cfg: &FitConfig) -> Option<Stage> {
    let objective = |z: &[f64]| loglik_transformed(model, z, cohort, None).ok();
    let widths = search_widths(model, cohort);
    let cda = cda_warm_start(objective, start, &widths, 1e-4, cfg.max_evals)?;
    let opts = BfgsOptions {
        grad_tol: cfg.grad_tol,
        step_tol: cfg.step_tol,
        stall_grad: gradient_acceptance(cda.value),
        max_evals: cfg.max_evals,
        ..BfgsOptions::default()
    };
    let out = bfgs(
        |z, g| {
            let l = loglik_transformed(model, z, cohort, Some(g)).ok()?;
            g.iter_mut().for_each(|v| *v = -*v);
            Some(-l)
        },
        &cda.params,
        &opts,
    )?;
    Some(Stage {
        z: out.x,
        loglik: -out.f,
        converged: out.converged,
        iterations: out.iterations,
        evaluations: cda.evaluations + out.evaluations,
        warnings: cda.warnings,
    })
}

/// Central-difference gradient of the log-likelihood (value only).
pub fn finite_difference_gradient(model: Model, cohort: &PreparedCohort, z: &[f64], h: f64) -> Option<Vec<f64>> {
    let mut zz = z.to_vec();
    (0..z.len())
        .map(|j| {
            zz[j] = z[j] + h;
            let up = loglik_transformed(model, &zz, cohort, None).ok()?;
            zz[j] = z[j] - h;
            let down = loglik_transformed(model, &zz, cohort, None).ok()?;
            zz[j] = z[j];
            Some((up - down) / (2.0 * h))
        })
        .collect()
}

/// Hessian of the log-likelihood on the transformed scale by central
/// differences of the analytic gradient, symmetrised.
pub fn numerical_hessian(model: Model, cohort: &PreparedCohort, z: &[f64], h: f64) -> Option<DMatrix<f64>> {
    let k = z.len();
    let mut hess = DMatrix::zeros(k, k);
    let mut zz = z.to_vec();
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    for j in 0..k {
        zz[j] = z[j] + h;
        loglik_transformed(model, &zz, cohort, Some(&mut gp)).ok()?;
        zz[j] = z[j] - h;
        loglik_transformed(model, &zz, cohort, Some(&mut gm)).ok()?;
        zz[j] = z[j];
        for i in 0..k {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Some(sym)
}

/// Inverse of the observed information `-H`; `None` if `-H` has a negative
/// eigenvalue. Eigenvalues are floored at `1e-10` before inversion.
pub fn covariance_from_hessian(hessian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let info = -hessian;
    let eig = SymmetricEigen::new(info);
    if eig.eigenvalues.iter().any(|&l| !(l >= 0.0)) {
        return None;
    }
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(1e-10));
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Natural-scale standard errors: `estimate * se` for log-scale parameters.
pub fn delta_method_se(model: Model, p: usize, estimates: &[f64], cov: &DMatrix<f64>) -> Vec<f64> {
    log_scale_mask(model, p)
        .iter()
        .enumerate()
        .map(|(i, &is_log)| {
            let se = cov[(i, i)].max(0.0).sqrt();
            if is_log {
                estimates[i] * se
            } else {
                se
            }
        })
        .collect()
}

pub fn fit(cohort: &PreparedCohort, cfg: &FitConfig) -> Result<FitResult, FitError> {
    let model = cfg.model;
    let p = cohort.dim();
    if cohort.is_empty() {
        return Err(FitError::EmptyCohort);
    }
    if cohort.events() == 0 {
        return Err(FitError::NoEvents);
    }
    let init = cfg.init.clone().unwrap_or_else(|| ModelParams::initial(model, p));
    if init.model() != model {
        return Err(FitError::InitMismatch {
            expected: model,
            got: init.model(),
        });
    }
    let z0 = init
        .to_transformed()
        .map_err(|e| FitError::BadStart(LikelihoodError::Param(e)))?;
    loglik_transformed(model, &z0, cohort, None).map_err(FitError::BadStart)?;

    let mut starts = vec![z0.clone()];
    for extra in &cfg.extra_starts {
        if extra.model() != model {
            return Err(FitError::InitMismatch {
                expected: model,
                got: extra.model(),
            });
        }
        if let Ok(z) = extra.to_transformed() {
            starts.push(z);
        }
    }
    if cfg.multistarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.multistart_sd).expect("valid sd");
        let base = ModelParams::initial(model, p).to_transformed().expect("defaults are positive");
        for _ in 0..cfg.multistarts {
            starts.push(base.iter().map(|v| v + noise.sample(&mut rng)).collect());
        }
    }

    let mut best: Option<(usize, Stage)> = None;
    let mut warnings = Vec::new();
    let mut total_evals = 0;
    for (i, start) in starts.iter().enumerate() {
        match run_stage(model, cohort, start, cfg) {
            Some(stage) => {
                total_evals += stage.evaluations;
                let better = best.as_ref().is_none_or(|(_, b)| stage.loglik > b.loglik);
                if better {
                    best = Some((i, stage));
                }
            }
            None => warnings.push(format!("start {i}: log-likelihood not finite")),
        }
    }
    let (best_start, stage) = best.ok_or_else(|| {
        FitError::BadStart(LikelihoodError::NonFiniteLikelihood { index: 0 })
    })?;
    warnings.extend(stage.warnings.iter().cloned());

    let z = stage.z;
    let params = ModelParams::from_transformed(model, p, &z).expect("optimiser keeps parameters finite");
    let estimates = params.to_natural();
    let loglik = stage.loglik;
    let gradient_norm = finite_difference_gradient(model, cohort, &z, 1e-5)
        .map(|g| g.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .unwrap_or(f64::INFINITY);
    let mut converged = stage.converged;
    if gradient_norm > gradient_acceptance(loglik) {
        converged = false;
        warnings.push(format!("gradient max-norm {gradient_norm:.3e} at the reported optimum"));
    }
    if !converged {
        warnings.push("not converged".into());
    }

    let covariance = numerical_hessian(model, cohort, &z, cfg.hessian_step).and_then(|h| covariance_from_hessian(&h));
    if covariance.is_none() {
        warnings.push("Hessian is not negative definite; standard errors unavailable".into());
    }
    let std_errors = covariance.as_ref().map(|c| delta_method_se(model, p, &estimates, c));

    let loglik_comparable = comparable_loglik(model, loglik, cohort);
    let k = model.n_params(p);
    let names = match &cfg.covariate_names {
        Some(n) => parameter_names(model, n),
        None => parameter_names(model, &default_covariate_names(p)),
    };
    Ok(FitResult {
        model,
        names,
        params,
        estimates,
        transformed: z,
        std_errors,
        covariance: covariance.map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect()),
        loglik,
        loglik_comparable,
        aic: aic(loglik_comparable, k),
        converged,
        gradient_norm,
        iterations: stage.iterations,
        evaluations: total_evals,
        n_starts: starts.len(),
        best_start,
        warnings,
    })
}

/// Frailty starting values `(mu, b)` tried for M3 besides the default.
pub const M3_EXTRA_STARTS: [(f64, f64); 2] = [(2.0, 1.0), (5.0, 5.0)];

/// Fits each requested model. M2 and M3 start from the fitted M1 excess
/// hazard parameters when M1 is among the requested models and converged;
/// M3 also tries the frailty starts in [`M3_EXTRA_STARTS`].
pub fn fit_models(cohort: &PreparedCohort, models: &[Model], cfg: &FitConfig) -> Vec<(Model, Result<FitResult, FitError>)> {
    let mut order: Vec<Model> = models.to_vec();
    order.sort();
    order.dedup();
    let mut m1: Option<FitResult> = None;
    let mut out = Vec::new();
    for model in order {
        let mut c = cfg.for_model(model);
        if let Some(base) = m1.as_ref().filter(|f| f.converged) {
            if model != Model::M1 {
                c.init = Some(ModelParams::with_default_correction(model, base.params.gh.clone()));
            }
        }
        if model == Model::M3 {
            let gh = c.init.as_ref().map(|p| p.gh.clone()).unwrap_or_else(|| ModelParams::initial(model, cohort.dim()).gh);
            c.extra_starts = M3_EXTRA_STARTS
                .iter()
                .map(|&(mu, b)| ModelParams {
                    gh: gh.clone(),
                    correction: Correction::Frailty(GammaFrailtyParams { mu, b }),
                })
                .collect();
        }
        let result = fit(cohort, &c);
        if model == Model::M1 {
            m1 = result.as_ref().ok().cloned();
        }
        out.push((model, result));
    }
    out
}

/// Two-sided normal quantile `z_{(1 + level) / 2}`.
pub fn normal_quantile(level: f64) -> Result<f64, FitError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FitError::InvalidLevel(level));
    }
    Ok(StdNormal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 * (1.0 + level)))
}

/// Wald intervals `estimate -/+ z * se` on the natural scale.
pub fn confidence_intervals(fit: &FitResult, level: f64) -> Result<Vec<(f64, f64)>, FitError> {
    let z = normal_quantile(level)?;
    let se = fit.std_errors.as_ref().ok_or(FitError::SEsUnavailable(fit.model))?;
    Ok(fit
        .estimates
        .iter()
        .zip(se)
        .map(|(&e, &s)| (e - z * s, e + z * s))
        .collect())
}

#[derive(Debug, Clone)]
pub struct M4Selection {
    pub model: Model,
    /// Index of the chosen fit in the input slice.
    pub index: usize,
    pub c_hat: f64,
    /// Models excluded because they did not converge.
    pub excluded: Vec<Model>,
}

/// AIC selection among converged fits; ties go to the model with fewer
/// parameters.
pub fn select_m4(fits: &[FitResult]) -> Result<M4Selection, FitError> {
    let excluded: Vec<Model> = fits.iter().filter(|f| !f.converged).map(|f| f.model).collect();
    for m in &excluded {
        log::warn!("{m} did not converge; excluded from AIC selection");
    }
    let (index, chosen) = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| f.converged && f.aic.is_finite())
        .min_by(|(_, a), (_, b)| a.aic.total_cmp(&b.aic).then(a.n_params().cmp(&b.n_params())))
        .ok_or(FitError::NoEligibleFit)?;
    Ok(M4Selection {
        model: chosen.model,
        index,
        c_hat: chosen.correction_summary(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{EwParams, GammaFrailtyParams};
    use crate::gh::GhParams;

    fn stub(model: Model, aic: f64, converged: bool) -> FitResult {
        let gh = GhParams::baseline_only(EwParams::new(1.0, 1.0, 1.0).unwrap(), 0);
        let correction = match model {
            Model::M1 => Correction::None,
            Model::M2 => Correction::Single { gamma: 2.0 },
            Model::M3 => Correction::Frailty(GammaFrailtyParams::new(6.0, 9.0).unwrap()),
        };
        let params = ModelParams { gh, correction };
        FitResult {
            model,
            names: vec![],
            estimates: params.to_natural(),
            transformed: vec![],
            params,
            std_errors: None,
            covariance: None,
            loglik: 0.0,
            loglik_comparable: 0.0,
            aic,
            converged,
            gradient_norm: 0.0,
            iterations: 0,
            evaluations: 0,
            n_starts: 1,
            best_start: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn m4_picks_lowest_aic() {
        let fits = [stub(Model::M1, 100.0, true), stub(Model::M2, 102.0, true), stub(Model::M3, 103.0, true)];
        let s = select_m4(&fits).unwrap();
        assert_eq!((s.model, s.c_hat), (Model::M1, 1.0));
        let fits = [stub(Model::M1, 104.0, true), stub(Model::M2, 102.0, true), stub(Model::M3, 103.0, true)];
        assert_eq!(select_m4(&fits).unwrap().c_hat, 2.0);
        let fits = [stub(Model::M1, 104.0, true), stub(Model::M2, 102.0, true), stub(Model::M3, 101.0, true)];
        assert_eq!(select_m4(&fits).unwrap().c_hat, 6.0);
    }

    #[test]
    fn m4_tie_goes_to_fewer_parameters() {
        let fits = [stub(Model::M3, 100.0, true), stub(Model::M2, 100.0, true), stub(Model::M1, 105.0, true)];
        assert_eq!(select_m4(&fits).unwrap().model, Model::M2);
        let fits = [stub(Model::M1, 100.0, true), stub(Model::M2, 100.0, true), stub(Model::M3, 105.0, true)];
        assert_eq!(select_m4(&fits).unwrap().model, Model::M1);
    }

    #[test]
    fn m4_skips_unconverged() {
        let fits = [stub(Model::M1, 90.0, false), stub(Model::M2, 102.0, true)];
        let s = select_m4(&fits).unwrap();
        assert_eq!(s.model, Model::M2);
        assert_eq!(s.excluded, vec![Model::M1]);
        assert!(matches!(select_m4(&[stub(Model::M1, 1.0, false)]), Err(FitError::NoEligibleFit)));
    }

    #[test]
    fn aic_counts_parameters() {
        assert_eq!(aic(-100.0, 9), 218.0);
    }

    #[test]
    fn normal_quantile_95() {
        assert!((normal_quantile(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn zero_se_gives_point_interval() {
        let mut f = stub(Model::M1, 0.0, true);
        f.std_errors = Some(vec![0.0; 3]);
        let ci = confidence_intervals(&f, 0.95).unwrap();
        assert!(ci.iter().zip(&f.estimates).all(|(&(lo, hi), &e)| lo == e && hi == e));
        f.std_errors = None;
        assert!(matches!(confidence_intervals(&f, 0.95), Err(FitError::SEsUnavailable(Model::M1))));
    }

    #[test]
    fn cda_solves_separable_quadratic_in_one_cycle() {
        let target = [0.3, -1.2, 2.0];
        let f = |x: &[f64]| Some(-x.iter().zip(&target).map(|(a, b)| (a - b).powi(2) * 3.0).sum::<f64>());
        let out = cda_warm_start(f, &[0.0; 3], &[3.0; 3], 1e-8, 600).unwrap();
        for (a, b) in out.params.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cda_keeps_stationary_point() {
        let f = |x: &[f64]| Some(-(x[0] - 1.0).powi(2) - (x[1] + 2.0).powi(2));
        let out = cda_warm_start(f, &[1.0, -2.0], &[3.0; 2], 1e-6, 400).unwrap();
        assert_eq!(out.params, vec![1.0, -2.0]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn delta_method_scales_log_parameters() {
        let est = [2.0, 0.5, 3.0, 0.1, 0.2];
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.04, 0.01, 0.09, 0.25, 1.0]));
        let se = delta_method_se(Model::M1, 1, &est, &cov);
        let expect = [2.0 * 0.2, 0.5 * 0.1, 3.0 * 0.3, 0.5, 1.0];
        for (a, b) in se.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn indefinite_hessian_is_flagged() {
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        assert!(covariance_from_hessian(&h).is_none());
        let h = DMatrix::from_row_slice(2, 2, &[-4.0, 1.0, 1.0, -2.0]);
        let c = covariance_from_hessian(&h).unwrap();
        let inv = (-h).try_inverse().unwrap();
        assert!((c - inv).abs().max() < 1e-12);
    }
}
