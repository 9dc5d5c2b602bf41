//! TOML run configurations for `fit`, `validate`, `predict` and `simulate`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use exhaz::distributions::{EwParams, FrailtyLaw, GammaFrailtyParams, LogNormalFrailtyParams};
use exhaz::io::{CohortColumns, ColumnTransform};
use exhaz::simulation::{find_scenario, AgeTransform, Dropout, ScenarioConfig};
use exhaz::{GhParams, Model, YearPolicy};

use super::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: Option<PathBuf>,
    pub life_table: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub year_policy: Option<String>,
    #[serde(default)]
    pub columns: ColumnsSection,
    #[serde(default)]
    pub fit: FitSection,
    pub simulation: Option<SimulationSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnsSection {
    pub time: Option<String>,
    pub status: Option<String>,
    pub age: Option<String>,
    pub year: Option<String>,
    #[serde(default)]
    pub x: Vec<XColumn>,
    #[serde(default)]
    pub z: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XColumn {
    pub name: String,
    #[serde(default)]
    pub center: f64,
    pub scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub multistarts: Option<usize>,
    pub multistart_sd: Option<f64>,
    pub max_evals: Option<usize>,
    pub grad_tol: Option<f64>,
    pub level: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Preset the other fields override.
    pub base: Option<String>,
    pub name: Option<String>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub multistarts: Option<usize>,
    pub diagnosis_year: Option<f64>,
    pub year_policy: Option<String>,
    pub admin_horizon: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub censoring_target: Option<f64>,
    pub life_table: Option<PathBuf>,
    pub age_center: Option<f64>,
    pub age_scale: Option<f64>,
    pub frailty: Option<FrailtySection>,
    pub truth: Option<TruthSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "law", rename_all = "lowercase")]
pub enum FrailtySection {
    None,
    Gamma { mu: f64, b: f64 },
    Lognormal { m: f64, s: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub kappa: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

pub fn parse_year_policy(s: &str) -> Result<YearPolicy, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "advancing" => Ok(YearPolicy::Advancing),
        "frozen" => Ok(YearPolicy::Frozen),
        other => Err(CliError::Config(format!(
            "year_policy must be `advancing` or `frozen`, got `{other}`"
        ))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn cohort_path(&self) -> Result<PathBuf, CliError> {
        self.cohort
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config("config has no `cohort` entry".into()))
    }

    pub fn life_table_path(&self) -> Result<PathBuf, CliError> {
        self.life_table
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config("config has no `life_table` entry".into()))
    }

    pub fn models(&self) -> Result<Vec<Model>, CliError> {
        match &self.models {
            None => Ok(Model::ALL.to_vec()),
            Some(list) if list.is_empty() => Err(CliError::Config("`models` is empty".into())),
            Some(list) => list
                .iter()
                .map(|m| m.parse().map_err(|e| CliError::Config(format!("models: {e}"))))
                .collect(),
        }
    }

    pub fn year_policy(&self) -> Result<YearPolicy, CliError> {
        self.year_policy.as_deref().map_or(Ok(YearPolicy::Advancing), parse_year_policy)
    }

    pub fn transforms(&self) -> Result<Vec<(String, ColumnTransform)>, CliError> {
        self.columns
            .x
            .iter()
            .map(|c| {
                let scale = c.scale.unwrap_or(1.0);
                if !(scale > 0.0 && scale.is_finite()) || !c.center.is_finite() {
                    return Err(CliError::Config(format!(
                        "column `{}`: transform needs a finite center and a positive scale",
                        c.name
                    )));
                }
                Ok((c.name.clone(), ColumnTransform { center: c.center, scale }))
            })
            .collect()
    }

    pub fn cohort_columns(&self) -> Result<CohortColumns, CliError> {
        let d = CohortColumns::default();
        let c = &self.columns;
        Ok(CohortColumns {
            time: c.time.clone().unwrap_or(d.time),
            status: c.status.clone().unwrap_or(d.status),
            age: c.age.clone().unwrap_or(d.age),
            year: c.year.clone().unwrap_or(d.year),
            x: self.transforms()?,
            z: c.z.clone(),
        })
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("simulation.{name} must be positive, got {v}")))
    }
}

impl SimulationSection {
    /// Scenario built from `base` (default `none`) with this section's overrides.
    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let base = self.base.as_deref().unwrap_or("none");
        let mut sc = find_scenario(base).ok_or_else(|| CliError::Config(format!("unknown scenario `{base}`")))?;
        if let Some(name) = &self.name {
            sc.name = name.clone();
        }
        if let Some(n) = self.n {
            sc.n = n;
        }
        if let Some(r) = self.replicates {
            sc.replicates = r;
        }
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(m) = self.multistarts {
            sc.multistarts = m;
        }
        if let Some(y) = self.diagnosis_year {
            sc.diagnosis_year = y;
        }
        if let Some(p) = &self.year_policy {
            sc.year_policy = parse_year_policy(p)?;
        }
        if let Some(h) = self.admin_horizon {
            sc.censoring.horizon = positive("admin_horizon", h)?;
        }
        match (self.dropout_rate, self.censoring_target) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "set at most one of simulation.dropout_rate and simulation.censoring_target".into(),
                ))
            }
            (Some(r), None) => sc.censoring.dropout = if r == 0.0 { Dropout::None } else { Dropout::Rate(r) },
            (None, Some(t)) => sc.censoring.dropout = Dropout::TargetProportion(t),
            (None, None) => {}
        }
        if self.age_center.is_some() || self.age_scale.is_some() {
            sc.age_transform = AgeTransform {
                center: self.age_center.unwrap_or(sc.age_transform.center),
                scale: positive("age_scale", self.age_scale.unwrap_or(sc.age_transform.scale))?,
            };
        }
        if let Some(f) = &self.frailty {
            sc.frailty = match *f {
                FrailtySection::None => FrailtyLaw::None,
                FrailtySection::Gamma { mu, b } => FrailtyLaw::Gamma(
                    GammaFrailtyParams::new(mu, b).map_err(|e| CliError::Config(format!("simulation.frailty: {e}")))?,
                ),
                FrailtySection::Lognormal { m, s } => FrailtyLaw::LogNormal(
                    LogNormalFrailtyParams::new(m, s)
                        .map_err(|e| CliError::Config(format!("simulation.frailty: {e}")))?,
                ),
            };
        }
        if let Some(t) = &self.truth {
            let baseline = EwParams::new(t.kappa, t.theta, t.alpha)
                .map_err(|e| CliError::Config(format!("simulation.truth: {e}")))?;
            sc.truth = GhParams::new(baseline, t.beta1.clone(), t.beta2.clone())
                .map_err(|e| CliError::Config(format!("simulation.truth: {e}")))?;
        }
        sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sc)
    }
}
