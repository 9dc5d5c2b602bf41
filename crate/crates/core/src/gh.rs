//! General hazard (GH) structure for the excess hazard.
//!
//! `h_E(t; x) = h0(t exp(x'b1)) exp(x'b2)` and
//! `H_E(t; x) = H0(t exp(x'b1)) exp(x'b2 - x'b1)` over an EW baseline.
//! `b1 = 0` gives proportional hazards, `b2 = 0` accelerated hazards and
//! `b1 = b2` accelerated failure time.
//!
//! The baseline scale `theta` is the parameter reported as sigma in some
//! simulation tables; no intercept is carried in `b2`.

use thiserror::Error;

use crate::distributions::{DistributionError, EwParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GhError {
    #[error("beta1 has {beta1} entries but beta2 has {beta2}")]
    LengthMismatch { beta1: usize, beta2: usize },
    #[error("covariate vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite regression coefficient")]
    NonFinite,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GhParams {
    pub baseline: EwParams,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

pub(crate) fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

impl GhParams {
    pub fn new(baseline: EwParams, beta1: Vec<f64>, beta2: Vec<f64>) -> Result<Self, GhError> {
        if beta1.len() != beta2.len() {
            return Err(GhError::LengthMismatch {
                beta1: beta1.len(),
                beta2: beta2.len(),
            });
        }
        if beta1.iter().chain(&beta2).any(|b| !b.is_finite()) {
            return Err(GhError::NonFinite);
        }
        Ok(Self { baseline, beta1, beta2 })
    }

    /// Baseline-only model with `p` zero coefficients per effect.
    pub fn baseline_only(baseline: EwParams, p: usize) -> Self {
        Self {
            baseline,
            beta1: vec![0.0; p],
            beta2: vec![0.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta1.len()
    }

    pub fn check_covariates(&self, x: &[f64]) -> Result<(), GhError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(GhError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub fn excess_hazard(&self, t: f64, x: &[f64]) -> Result<f64, GhError> {
        self.check_covariates(x)?;
        let xb1 = dot(x, &self.beta1);
        let xb2 = dot(x, &self.beta2);
        Ok(self.baseline.hazard(t * xb1.exp())? * xb2.exp())
    }

    pub fn excess_cum_hazard(&self, t: f64, x: &[f64]) -> Result<f64, GhError> {
        self.check_covariates(x)?;
        let xb1 = dot(x, &self.beta1);
        let xb2 = dot(x, &self.beta2);
        Ok(self.baseline.cum_hazard(t * xb1.exp())? * (xb2 - xb1).exp())
    }

    /// Survival function of the excess hazard alone.
    pub fn net_survival(&self, t: f64, x: &[f64]) -> Result<f64, GhError> {
        self.check_covariates(x)?;
        let xb1 = dot(x, &self.beta1);
        let xb2 = dot(x, &self.beta2);
        Ok((self.baseline.log_survival(t * xb1.exp()) * (xb2 - xb1).exp()).exp())
    }

    /// Time `t` with `net_survival(t, x) = u`, for `0 < u < 1`.
    pub fn inverse_excess_survival(&self, u: f64, x: &[f64]) -> Result<f64, GhError> {
        self.check_covariates(x)?;
        let xb1 = dot(x, &self.beta1);
        let xb2 = dot(x, &self.beta2);
        // H0(s) = -ln(u) exp(x'b1 - x'b2), s = t exp(x'b1)
        let baseline_log_surv = u.ln() * (xb1 - xb2).exp();
        Ok(self.baseline.quantile_from_log_survival(baseline_log_surv) * (-xb1).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> GhParams {
        GhParams::new(
            EwParams::new(0.6, 1.75, 2.5).unwrap(),
            vec![0.1, 0.1, 0.1],
            vec![0.05, 0.2, 0.25],
        )
        .unwrap()
    }

    #[test]
    fn validates_lengths() {
        let b = EwParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            GhParams::new(b, vec![0.0], vec![]),
            Err(GhError::LengthMismatch { .. })
        ));
        assert!(matches!(
            table1().excess_hazard(1.0, &[0.0, 0.0]),
            Err(GhError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn zero_covariates_give_baseline() {
        let p = table1();
        let x = [0.0; 3];
        for t in [0.1, 1.0, 4.0] {
            assert_eq!(p.excess_hazard(t, &x).unwrap(), p.baseline.hazard(t).unwrap());
            assert_eq!(p.excess_cum_hazard(t, &x).unwrap(), p.baseline.cum_hazard(t).unwrap());
        }
        let t5 = p.net_survival(5.0, &x).unwrap();
        assert!((t5 - (-p.baseline.cum_hazard(5.0).unwrap()).exp()).abs() < 1e-15);
        assert_eq!(p.net_survival(0.0, &x).unwrap(), 1.0);
        assert_eq!(p.excess_cum_hazard(0.0, &x).unwrap(), 0.0);
    }

    #[test]
    fn no_covariates_supported() {
        let p = GhParams::baseline_only(EwParams::new(1.2, 2.0, 0.8).unwrap(), 0);
        let t = p.inverse_excess_survival(0.3, &[]).unwrap();
        assert!((p.net_survival(t, &[]).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let p = table1();
        for x in [[0.0, 0.0, 0.0], [-3.5, 1.0, 0.0], [1.5, 1.0, 1.0], [-4.0, 0.0, 1.0]] {
            for u in [0.05, 0.5, 0.95] {
                let t = p.inverse_excess_survival(u, &x).unwrap();
                assert!((p.net_survival(t, &x).unwrap() - u).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn net_survival_is_monotone() {
        let p = table1();
        let x = [1.0, 1.0, 0.0];
        let s: Vec<f64> = (0..200).map(|i| p.net_survival(i as f64 * 0.05, &x).unwrap()).collect();
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
        assert!(s[1..].iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
