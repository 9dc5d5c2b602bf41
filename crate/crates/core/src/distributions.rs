//! Exponentiated Weibull baseline and frailty laws.
//!
//! The Exponentiated Weibull (EW) distribution with shape `kappa`, scale
//! `theta` and power `alpha` has CDF `F(t) = [1 - exp{-(t/theta)^kappa}]^alpha`.
//! Tail quantities are evaluated in log space so that `log S(t)` stays
//! accurate when `S(t)` is far below machine epsilon.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("numerical overflow evaluating {what} at t = {t}")]
    NumericalOverflow { what: &'static str, t: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, DistributionError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(DistributionError::InvalidParameter { name, value })
    }
}

/// Above this value of `(t/theta)^kappa`, `exp(-u)` is treated as zero.
const TAIL_U: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwParams {
    pub kappa: f64,
    pub theta: f64,
    pub alpha: f64,
}

/// Log hazard and log survival of the EW baseline, with partial derivatives
/// with respect to `ln kappa`, `ln alpha` and `w = ln(t / theta)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EwTerms {
    pub log_hazard: f64,
    pub log_surv: f64,
    pub dlh_dk: f64,
    pub dlh_da: f64,
    pub dlh_dw: f64,
    pub dls_dk: f64,
    pub dls_da: f64,
    pub dls_dw: f64,
}

impl EwParams {
    pub fn new(kappa: f64, theta: f64, alpha: f64) -> Result<Self, DistributionError> {
        Ok(Self {
            kappa: positive("kappa", kappa)?,
            theta: positive("theta", theta)?,
            alpha: positive("alpha", alpha)?,
        })
    }

    /// `ln(1 - exp(-u))`, accurate at both ends.
    fn ln_one_minus_exp_neg(u: f64) -> f64 {
        if u > std::f64::consts::LN_2 {
            (-(-u).exp()).ln_1p()
        } else {
            (-(-u).exp_m1()).ln()
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let u = (t / self.theta).powf(self.kappa);
        (self.alpha * Self::ln_one_minus_exp_neg(u)).exp()
    }

    /// `ln S(t) = ln(1 - F(t))`.
    pub fn log_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let u = (t / self.theta).powf(self.kappa);
        Self::log_survival_u(u, self.alpha)
    }

    fn log_survival_u(u: f64, alpha: f64) -> f64 {
        if u > TAIL_U {
            return alpha.ln() - u;
        }
        let ln_f = alpha * Self::ln_one_minus_exp_neg(u);
        if ln_f > -1e-200 {
            // F == 1 to double precision: 1 - F ~ alpha * exp(-u)
            alpha.ln() - u
        } else if ln_f < -std::f64::consts::LN_2 {
            (-ln_f.exp()).ln_1p()
        } else {
            (-ln_f.exp_m1()).ln()
        }
    }

    pub fn log_pdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = t / self.theta;
        let u = z.powf(self.kappa);
        let ln_q = if u > TAIL_U { 0.0 } else { Self::ln_one_minus_exp_neg(u) };
        self.alpha.ln() + self.kappa.ln() - self.theta.ln() + (self.kappa - 1.0) * z.ln()
            + (self.alpha - 1.0) * ln_q
            - u
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.log_pdf(t).exp()
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        self.log_pdf(t) - self.log_survival(t)
    }

    /// `f(t) / (1 - F(t))`.
    pub fn hazard(&self, t: f64) -> Result<f64, DistributionError> {
        let h = if t <= 0.0 {
            let shape = self.kappa * self.alpha;
            if shape > 1.0 {
                0.0
            } else if shape == 1.0 {
                1.0 / self.theta
            } else {
                f64::INFINITY
            }
        } else {
            self.log_hazard(t).exp()
        };
        if h.is_finite() {
            Ok(h)
        } else {
            Err(DistributionError::NumericalOverflow { what: "EW hazard", t })
        }
    }

    /// `-ln(1 - F(t))`.
    pub fn cum_hazard(&self, t: f64) -> Result<f64, DistributionError> {
        let h = -self.log_survival(t);
        if h.is_finite() {
            Ok(h)
        } else {
            Err(DistributionError::NumericalOverflow { what: "EW cumulative hazard", t })
        }
    }

    /// Closed-form inverse of the CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let inner = -(-(u.ln() / self.alpha).exp()).ln_1p();
        self.theta * inner.powf(1.0 / self.kappa)
    }

    /// Time `t` with `ln S(t) = log_surv` (`log_surv < 0`); stays accurate
    /// when `F(t)` is tiny or `S(t)` is tiny.
    pub fn quantile_from_log_survival(&self, log_surv: f64) -> f64 {
        // ln F = ln(1 - exp(log_surv))
        let ln_f = Self::ln_one_minus_exp_neg(-log_surv);
        // u = -ln(1 - F^(1/alpha))
        let ln_root = ln_f / self.alpha;
        let u = if ln_root > -1e-200 {
            // F^(1/alpha) == 1 to double precision; use 1 - F^(1/a) ~ (1 - F) / a
            -(log_surv - self.alpha.ln())
        } else {
            -(-ln_root.exp_m1()).ln()
        };
        self.theta * u.powf(1.0 / self.kappa)
    }

    /// Log hazard, log survival and their derivatives at `w = ln(t/theta)`.
    pub(crate) fn terms(&self, ln_theta: f64, w: f64) -> EwTerms {
        let (kappa, alpha) = (self.kappa, self.alpha);
        let u = (kappa * w).exp();
        let (ln_q, e_over_q, log_surv, dls_du, dls_da) = if u > TAIL_U {
            (0.0, 0.0, alpha.ln() - u, -1.0, 1.0)
        } else {
            let ln_q = Self::ln_one_minus_exp_neg(u);
            let e_over_q = (-u - ln_q).exp();
            let ln_f = alpha * ln_q;
            let log_surv = Self::log_survival_u(u, alpha);
            let odds = (ln_f - log_surv).exp();
            (ln_q, e_over_q, log_surv, -alpha * odds * e_over_q, -odds * alpha * ln_q)
        };
        let log_pdf = alpha.ln() + kappa.ln() - ln_theta + (kappa - 1.0) * w + (alpha - 1.0) * ln_q - u;
        let slope = ((alpha - 1.0) * e_over_q - 1.0) * kappa * u;
        let dlf_da = 1.0 + alpha * ln_q;
        let dlf_dk = 1.0 + kappa * w + slope * w;
        let dlf_dw = (kappa - 1.0) + slope;
        let dls_dk = dls_du * kappa * w * u;
        let dls_dw = dls_du * kappa * u;
        EwTerms {
            log_hazard: log_pdf - log_surv,
            log_surv,
            dlh_dk: dlf_dk - dls_dk,
            dlh_da: dlf_da - dls_da,
            dlh_dw: dlf_dw - dls_dw,
            dls_dk,
            dls_da,
            dls_dw,
        }
    }
}

/// Gamma law with mean `mu` and scale `b` (shape `mu / b`, variance `mu * b`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFrailtyParams {
    pub mu: f64,
    pub b: f64,
}

impl GammaFrailtyParams {
    pub fn new(mu: f64, b: f64) -> Result<Self, DistributionError> {
        Ok(Self {
            mu: positive("mu", mu)?,
            b: positive("b", b)?,
        })
    }

    pub fn shape(&self) -> f64 {
        self.mu / self.b
    }

    pub fn variance(&self) -> f64 {
        self.mu * self.b
    }

    pub fn pdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let k = self.shape();
        ((k - 1.0) * r.ln() - r / self.b - ln_gamma(k) - k * self.b.ln()).exp()
    }

    /// `E[exp(-s R)] = (1 + b s)^(-mu/b)`.
    pub fn laplace(&self, s: f64) -> f64 {
        (-self.shape() * (self.b * s).ln_1p()).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape(), self.b).expect("validated parameters").sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalFrailtyParams {
    pub m: f64,
    pub s: f64,
}

impl LogNormalFrailtyParams {
    pub fn new(m: f64, s: f64) -> Result<Self, DistributionError> {
        if !m.is_finite() {
            return Err(DistributionError::InvalidParameter { name: "m", value: m });
        }
        Ok(Self { m, s: positive("s", s)? })
    }

    pub fn mean(&self) -> f64 {
        (self.m + 0.5 * self.s * self.s).exp()
    }

    pub fn variance(&self) -> f64 {
        (self.s * self.s).exp_m1() * (2.0 * self.m + self.s * self.s).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        LogNormal::new(self.m, self.s).expect("validated parameters").sample(rng)
    }
}

/// Distribution of the multiplicative correction on the background hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrailtyLaw {
    None,
    Gamma(GammaFrailtyParams),
    LogNormal(LogNormalFrailtyParams),
}

impl FrailtyLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FrailtyLaw::None => 1.0,
            FrailtyLaw::Gamma(g) => g.sample(rng),
            FrailtyLaw::LogNormal(l) => l.sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            FrailtyLaw::None => 1.0,
            FrailtyLaw::Gamma(g) => g.mu,
            FrailtyLaw::LogNormal(l) => l.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            FrailtyLaw::None => 0.0,
            FrailtyLaw::Gamma(g) => g.variance(),
            FrailtyLaw::LogNormal(l) => l.variance(),
        }
    }
}
