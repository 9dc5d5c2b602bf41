//! Model tags, parameter sets and the unconstrained parameterisation used
//! by the optimiser.
//!
//! Transformed vector layout: `[ln kappa, ln theta, ln alpha, beta1.., beta2..,
//! correction..]` where the correction block is empty (M1), `[ln gamma]` (M2)
//! or `[ln mu, ln b]` (M3).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::distributions::{EwParams, GammaFrailtyParams};
use crate::gh::GhParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: String, value: f64 },
    #[error("expected {expected} parameters, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unknown model `{0}` (expected M1, M2 or M3)")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    /// Classical additive excess hazard model.
    M1,
    /// Single multiplicative correction of the background hazard.
    M2,
    /// Gamma-frailty correction of the background hazard.
    M3,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::M1, Model::M2, Model::M3];

    pub fn correction_len(self) -> usize {
        match self {
            Model::M1 => 0,
            Model::M2 => 1,
            Model::M3 => 2,
        }
    }

    /// Number of free parameters with `p` covariates.
    pub fn n_params(self, p: usize) -> usize {
        3 + 2 * p + self.correction_len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Model::M1 => "M1",
            Model::M2 => "M2",
            Model::M3 => "M3",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(Model::M1),
            "M2" => Ok(Model::M2),
            "M3" => Ok(Model::M3),
            _ => Err(ParamError::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correction {
    None,
    Single { gamma: f64 },
    Frailty(GammaFrailtyParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gh: GhParams,
    pub correction: Correction,
}

fn log_of(name: &str, value: f64) -> Result<f64, ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(value.ln())
    } else {
        Err(ParamError::NonPositive {
            name: name.to_string(),
            value,
        })
    }
}

fn exp_of(name: &str, z: f64) -> Result<f64, ParamError> {
    let v = z.exp();
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ParamError::NonPositive {
            name: name.to_string(),
            value: v,
        })
    }
}

impl ModelParams {
    pub fn model(&self) -> Model {
        match self.correction {
            Correction::None => Model::M1,
            Correction::Single { .. } => Model::M2,
            Correction::Frailty(_) => Model::M3,
        }
    }

    /// Starting values: `kappa = theta = 1`, `alpha = 2`, zero coefficients,
    /// `gamma = 1.2` (M2) and `mu = 1.2, b = 0.1` (M3).
    pub fn initial(model: Model, p: usize) -> Self {
        let baseline = EwParams {
            kappa: 1.0,
            theta: 1.0,
            alpha: 2.0,
        };
        Self::with_default_correction(model, GhParams::baseline_only(baseline, p))
    }

    /// `gh` combined with the default starting correction for `model`.
    pub fn with_default_correction(model: Model, gh: GhParams) -> Self {
        let correction = match model {
            Model::M1 => Correction::None,
            Model::M2 => Correction::Single { gamma: 1.2 },
            Model::M3 => Correction::Frailty(GammaFrailtyParams { mu: 1.2, b: 0.1 }),
        };
        Self { gh, correction }
    }

    /// Natural-scale values in layout order.
    pub fn to_natural(&self) -> Vec<f64> {
        let b = &self.gh.baseline;
        let mut v = vec![b.kappa, b.theta, b.alpha];
        v.extend(&self.gh.beta1);
        v.extend(&self.gh.beta2);
        match self.correction {
            Correction::None => {}
            Correction::Single { gamma } => v.push(gamma),
            Correction::Frailty(g) => {
                v.push(g.mu);
                v.push(g.b);
            }
        }
        v
    }

    pub fn from_natural(model: Model, p: usize, v: &[f64]) -> Result<Self, ParamError> {
        let z = transform_natural(model, p, v)?;
        Self::from_transformed(model, p, &z)
    }

    /// Maps positive parameters through `ln`; coefficients are unchanged.
    pub fn to_transformed(&self) -> Result<Vec<f64>, ParamError> {
        let p = self.gh.dim();
        transform_natural(self.model(), p, &self.to_natural())
    }

    pub fn from_transformed(model: Model, p: usize, z: &[f64]) -> Result<Self, ParamError> {
        let expected = model.n_params(p);
        if z.len() != expected {
            return Err(ParamError::Length { expected, got: z.len() });
        }
        let baseline = EwParams {
            kappa: exp_of("kappa", z[0])?,
            theta: exp_of("theta", z[1])?,
            alpha: exp_of("alpha", z[2])?,
        };
        let beta1 = z[3..3 + p].to_vec();
        let beta2 = z[3 + p..3 + 2 * p].to_vec();
        let c = 3 + 2 * p;
        let correction = match model {
            Model::M1 => Correction::None,
            Model::M2 => Correction::Single {
                gamma: exp_of("gamma", z[c])?,
            },
            Model::M3 => Correction::Frailty(GammaFrailtyParams {
                mu: exp_of("mu", z[c])?,
                b: exp_of("b", z[c + 1])?,
            }),
        };
        Ok(Self {
            gh: GhParams {
                baseline,
                beta1,
                beta2,
            },
            correction,
        })
    }
}

/// Indices (in layout order) of the parameters carried on the log scale.
pub fn log_scale_mask(model: Model, p: usize) -> Vec<bool> {
    let mut mask = vec![true; 3];
    mask.extend(std::iter::repeat_n(false, 2 * p));
    mask.extend(std::iter::repeat_n(true, model.correction_len()));
    mask
}

/// Natural-scale vector to the unconstrained scale.
pub fn transform_natural(model: Model, p: usize, v: &[f64]) -> Result<Vec<f64>, ParamError> {
    let expected = model.n_params(p);
    if v.len() != expected {
        return Err(ParamError::Length { expected, got: v.len() });
    }
    let names = parameter_names(model, &default_covariate_names(p));
    log_scale_mask(model, p)
        .into_iter()
        .zip(v.iter().zip(&names))
        .map(|(is_log, (&x, name))| if is_log { log_of(name, x) } else { Ok(x) })
        .collect()
}

/// Unconstrained vector back to natural scale.
pub fn untransform(model: Model, p: usize, z: &[f64]) -> Result<Vec<f64>, ParamError> {
    Ok(ModelParams::from_transformed(model, p, z)?.to_natural())
}

pub fn default_covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| j.to_string()).collect()
}

/// Parameter names in layout order; coefficients are `beta1_<cov>` and `beta2_<cov>`.
pub fn parameter_names<S: AsRef<str>>(model: Model, covariates: &[S]) -> Vec<String> {
    let mut names = vec!["kappa".to_string(), "theta".to_string(), "alpha".to_string()];
    names.extend(covariates.iter().map(|c| format!("beta1_{}", c.as_ref())));
    names.extend(covariates.iter().map(|c| format!("beta2_{}", c.as_ref())));
    match model {
        Model::M1 => {}
        Model::M2 => names.push("gamma".into()),
        Model::M3 => {
            names.push("mu".into());
            names.push("b".into());
        }
    }
    names
}
