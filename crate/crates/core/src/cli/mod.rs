//! Command-line front end.

mod config;

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use exhaz::estimation::{fit_models, select_m4, FitConfig, FitError, FitResult};
use exhaz::io::{self, CurvePoint, FitRecord, IoError};
use exhaz::lifetable::LifeTableError;
use exhaz::likelihood::LikelihoodError;
use exhaz::simulation::{builtin_scenarios, find_scenario, reference_life_table, run_study, Dropout, SimulationError};
use exhaz::{FrailtyLaw, LifeTable, PatientRecord, PreparedCohort};

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::MissingColumn(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LifeTableError> for CliError {
    fn from(e: LifeTableError) -> Self {
        match e {
            LifeTableError::ZeroHazardPath { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(format!("life table: {e}")),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::InvalidConfig(_) | SimulationError::TargetUnreachable { .. } => {
                CliError::Config(e.to_string())
            }
            SimulationError::LifeTable(e) => e.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "exhaz", version, about = "Excess hazard regression with background mortality corrections")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit M1-M3 to a cohort and select M4 by AIC.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Excess hazard and net survival curves from a fit file.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Fit file written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// CSV of covariate profiles, one column per covariate.
        #[arg(long)]
        profiles: PathBuf,
        /// Time grid: `start:stop:step` or a comma-separated list.
        #[arg(long, default_value = "0:5:0.1")]
        times: String,
    },
    /// Run a simulation study for a preset or configured scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Preset name (see `scenarios`).
        scenario: Option<String>,
        /// Cohort size.
        #[arg(long)]
        n: Option<usize>,
        /// Number of replicates.
        #[arg(long = "N")]
        replicates: Option<usize>,
    },
    /// List the built-in scenarios.
    Scenarios,
    /// Check the inputs named by a configuration without fitting.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { common } => cmd_fit(&common),
        Command::Predict {
            common,
            fit,
            profiles,
            times,
        } => cmd_predict(&common, &fit, &profiles, &times),
        Command::Simulate {
            common,
            scenario,
            n,
            replicates,
        } => cmd_simulate(&common, scenario.as_deref(), n, replicates),
        Command::Scenarios => {
            cmd_scenarios();
            Ok(())
        }
        Command::Validate { common } => cmd_validate(&common).map(|_| ()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunConfig::load(path)
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>, default: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.as_deref().map(|p| c.resolve(p))))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Orders the configured strata columns like the table's; a set of the
/// same names in another order is rearranged, otherwise they map by position.
fn align_strata(table: &LifeTable, z: &[String]) -> Result<Vec<String>, CliError> {
    let table_cols = table.strata_columns();
    if z.len() != table_cols.len() {
        return Err(CliError::Config(format!(
            "life table is stratified by {:?} but the config lists {} z column(s) {:?}",
            table_cols,
            z.len(),
            z
        )));
    }
    if table_cols.iter().all(|c| z.contains(c)) {
        Ok(table_cols.to_vec())
    } else {
        Ok(z.to_vec())
    }
}

struct Inputs {
    cfg: RunConfig,
    table: LifeTable,
    records: Vec<PatientRecord>,
    cohort: PreparedCohort,
    x_names: Vec<String>,
}

fn load_inputs(common: &Common) -> Result<Inputs, CliError> {
    let cfg = load_config(common)?;
    let table_path = cfg.life_table_path()?;
    let table = LifeTable::from_csv(open(&table_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", table_path.display())))?;
    let mut cols = cfg.cohort_columns()?;
    cols.z = align_strata(&table, &cols.z)?;
    let cohort_path = cfg.cohort_path()?;
    let records = io::read_cohort(open(&cohort_path)?, &cols).map_err(|e| match e {
        IoError::MissingColumn(c) => CliError::Config(format!("{}: missing column `{c}`", cohort_path.display())),
        other => CliError::Data(format!("{}: {other}", cohort_path.display())),
    })?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no patients", cohort_path.display())));
    }
    let policy = cfg.year_policy()?;
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = table.stratum(&r.z) {
            return Err(CliError::Data(format!(
                "{}: patient on line {}: {e}",
                cohort_path.display(),
                i + 2
            )));
        }
    }
    let cohort = PreparedCohort::new(&records, &table, policy).map_err(|e| match e {
        LikelihoodError::LifeTable { index, source } => CliError::Data(format!(
            "{}: patient on line {}: {source}",
            cohort_path.display(),
            index + 2
        )),
        other => CliError::Data(other.to_string()),
    })?;
    let x_names = cols.x_names();
    Ok(Inputs {
        cfg,
        table,
        records,
        cohort,
        x_names,
    })
}

fn cmd_validate(common: &Common) -> Result<Inputs, CliError> {
    let inputs = load_inputs(common)?;
    let models = inputs.cfg.models()?;
    println!(
        "ok: {} patients, {} events, {} covariates, life table {} strata x ages {:?} x years {:?}; models {}",
        inputs.records.len(),
        inputs.cohort.events(),
        inputs.x_names.len(),
        inputs.table.strata().len(),
        inputs.table.age_range(),
        inputs.table.year_range(),
        models.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")
    );
    Ok(inputs)
}

fn fit_config(cfg: &RunConfig, common: &Common, x_names: &[String]) -> Result<FitConfig, CliError> {
    let mut fc = FitConfig::new(exhaz::Model::M1);
    let f = &cfg.fit;
    if let Some(v) = f.multistarts {
        fc.multistarts = v;
    }
    if let Some(v) = f.multistart_sd {
        fc.multistart_sd = v;
    }
    if let Some(v) = f.max_evals {
        fc.max_evals = v;
    }
    if let Some(v) = f.grad_tol {
        fc.grad_tol = v;
    }
    if let Some(v) = f.level {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Config(format!("fit.level must lie in (0, 1), got {v}")));
        }
        fc.level = v;
    }
    fc.seed = common.seed.or(cfg.seed).unwrap_or(0);
    fc.covariate_names = Some(x_names.to_vec());
    Ok(fc)
}

fn cmd_fit(common: &Common) -> Result<(), CliError> {
    let inputs = load_inputs(common)?;
    let models = inputs.cfg.models()?;
    let fc = fit_config(&inputs.cfg, common, &inputs.x_names)?;
    let dir = out_dir(common, Some(&inputs.cfg), "exhaz-fit");
    create_dir(&dir)?;

    let mut fits: Vec<FitResult> = Vec::new();
    for (model, result) in fit_models(&inputs.cohort, &models, &fc) {
        match result {
            Ok(f) => {
                if !f.converged {
                    log::warn!("{model}: not converged ({})", f.warnings.join("; "));
                }
                let path = dir.join(format!("fit_{}.csv", model.as_str().to_ascii_lowercase()));
                let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                io::write_fit(file, &FitRecord::from_fit(&f, fc.level))?;
                println!(
                    "{model}: loglik {:.4}, AIC {:.4}, converged {}",
                    f.loglik_comparable, f.aic, f.converged
                );
                fits.push(f);
            }
            Err(e @ (FitError::EmptyCohort | FitError::NoEvents)) => return Err(CliError::Data(e.to_string())),
            Err(e) => return Err(CliError::Numeric(format!("{model}: {e}"))),
        }
    }
    let selection = select_m4(&fits).ok();
    if let Some(s) = &selection {
        println!("M4: {} (c = {})", s.model, s.c_hat);
    } else {
        log::warn!("no converged fit; M4 not selected");
    }
    let path = dir.join("comparison.csv");
    let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    io::write_comparison(file, &io::comparison_rows(&fits, selection.as_ref()))?;
    Ok(())
}

fn parse_times(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("cannot parse time grid `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let times = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| start + i as f64 * step).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(bad());
    }
    Ok(times)
}

fn cmd_predict(common: &Common, fit: &Path, profiles: &Path, times: &str) -> Result<(), CliError> {
    let cfg = common.config.as_deref().map(RunConfig::load).transpose()?;
    let record = io::read_fit(open(fit)?).map_err(|e| CliError::Data(format!("{}: {e}", fit.display())))?;
    let params = record.model_params()?;
    let names = record.covariate_names();
    let transforms = cfg.as_ref().map(|c| c.transforms()).transpose()?.unwrap_or_default();
    let grid = parse_times(times)?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(profiles)?);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", profiles.display())))?
        .clone();
    let cols = names
        .iter()
        .map(|n| {
            header.iter().position(|h| h == n).ok_or_else(|| {
                CliError::Config(format!(
                    "{}: no column for covariate `{n}` (dimension mismatch with the fit)",
                    profiles.display()
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let id_col = header.iter().position(|h| h == "profile_id");

    let mut points = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", profiles.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = match id_col {
            Some(c) => rec[c]
                .parse::<usize>()
                .map_err(|_| CliError::Data(format!("{}: line {line}: bad profile_id", profiles.display())))?,
            None => k,
        };
        let x = cols
            .iter()
            .zip(&names)
            .map(|(&c, n)| {
                let v = rec[c].parse::<f64>().map_err(|_| {
                    CliError::Data(format!("{}: line {line}: `{}` is not a number", profiles.display(), &rec[c]))
                })?;
                Ok(transforms.iter().find(|(t, _)| t == n).map_or(v, |(_, tr)| tr.apply(v)))
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        for &t in &grid {
            let gh = &params.gh;
            let excess_hazard = gh.excess_hazard(t, &x).map_err(|e| CliError::Numeric(e.to_string()))?;
            let net_survival = gh.net_survival(t, &x).map_err(|e| CliError::Numeric(e.to_string()))?;
            points.push(CurvePoint {
                t,
                profile_id: id,
                excess_hazard,
                net_survival,
            });
        }
    }
    let dir = out_dir(common, cfg.as_ref(), ".");
    create_dir(&dir)?;
    let path = dir.join("curves.csv");
    let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    io::write_curves(file, &points)?;
    println!("wrote {} rows to {}", points.len(), path.display());
    Ok(())
}

fn cmd_simulate(
    common: &Common,
    scenario: Option<&str>,
    n: Option<usize>,
    replicates: Option<usize>,
) -> Result<(), CliError> {
    let cfg = common.config.as_deref().map(RunConfig::load).transpose()?;
    let section = cfg.as_ref().and_then(|c| c.simulation.as_ref());
    let mut sc = match (scenario, section) {
        (Some(name), None) => find_scenario(name).ok_or_else(|| {
            CliError::Config(format!("unknown scenario `{name}` (run `exhaz scenarios` for the list)"))
        })?,
        (None, Some(s)) => s.scenario()?,
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either a scenario name or a config with a [simulation] section, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "a scenario name or a config with a [simulation] section is required".into(),
            ))
        }
    };
    if let Some(n) = n {
        sc.n = n;
    }
    if let Some(r) = replicates {
        sc.replicates = r;
    }
    if let Some(s) = common.seed {
        sc.seed = s;
    }
    sc.validate()?;
    let table = match section.and_then(|s| s.life_table.as_deref()) {
        Some(p) => {
            let path = cfg.as_ref().expect("section implies config").resolve(p);
            LifeTable::from_csv(open(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => reference_life_table(),
    };
    let jobs = common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let started = Instant::now();
    let report = run_study(&sc, &table, jobs)?;
    let wall = started.elapsed().as_secs_f64();
    let dir = out_dir(common, cfg.as_ref(), &format!("exhaz-sim-{}", sc.name));
    let files = io::write_study_report(&dir, &report, Some(wall))?;
    println!(
        "{}: {} replicates of n = {} in {:.1}s, censoring {:.3}; report in {} ({} files)",
        sc.name,
        sc.replicates,
        sc.n,
        wall,
        report.mean_censoring,
        dir.display(),
        files.len()
    );
    Ok(())
}

fn cmd_scenarios() {
    println!("{:<16} {:<34} {:<22} {:>6} {:>6}", "name", "frailty", "censoring", "n", "N");
    for sc in builtin_scenarios() {
        let frailty = match sc.frailty {
            FrailtyLaw::None => "none".to_string(),
            FrailtyLaw::Gamma(g) => format!("Ga({}, {})", g.mu, g.b),
            FrailtyLaw::LogNormal(l) => format!("LN({:.4}, {:.4})", l.m, l.s),
        };
        let censoring = match sc.censoring.dropout {
            Dropout::None => format!("admin at {}", sc.censoring.horizon),
            Dropout::Rate(r) => format!("admin + rate {r}"),
            Dropout::TargetProportion(p) => format!("admin + drop-out {:.0}%", 100.0 * p),
        };
        println!("{:<16} {:<34} {:<22} {:>6} {:>6}", sc.name, frailty, censoring, sc.n, sc.replicates);
    }
}
