//! Generator and study-runner behaviour on simulated cohorts.

mod common;

use common::{dkw_epsilon, ks_distance};
use exhaz::simulation::{
    calibrate_dropout_rate, find_scenario, generate_cohort, reference_life_table, resolve_dropout, run_study,
    AgeTransform, Dropout, DropoutPilot, ScenarioConfig, SimulationError, PILOT_SIZE,
};
use exhaz::{EwParams, FrailtyLaw, GhParams, LifeTable, LogNormalFrailtyParams};

fn flat_table(rate: f64) -> LifeTable {
    LifeTable::from_fn(
        vec!["sex".into()],
        vec![vec!["0".into()], vec!["1".into()]],
        (0, 110),
        (1990, 2030),
        |_, _, _| rate,
    )
    .unwrap()
}

fn uncensored(mut sc: ScenarioConfig) -> ScenarioConfig {
    sc.censoring.horizon = 1e9;
    sc.censoring.dropout = Dropout::None;
    sc
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn excess_times_are_uniform_under_their_own_net_survival() {
    let mut sc = uncensored(find_scenario("none-admin").unwrap());
    sc.n = 10_000;
    let table = flat_table(1e-12);
    let recs = generate_cohort(&sc, 0, &table, None).unwrap();
    let pit: Vec<f64> = recs
        .iter()
        .map(|r| 1.0 - sc.truth.net_survival(r.time, &r.x).unwrap())
        .collect();
    let d = ks_distance(&pit, |u| u.clamp(0.0, 1.0));
    assert!(d < dkw_epsilon(pit.len(), 0.01), "KS distance {d}");
    assert!(recs.iter().all(|r| r.status));
}

#[test]
fn other_cause_times_are_exponential_on_a_flat_table() {
    let mut sc = uncensored(find_scenario("none-admin").unwrap());
    sc.n = 10_000;
    sc.truth = GhParams::baseline_only(EwParams::new(1.0, 1e12, 1.0).unwrap(), 3);
    let rate = 0.05;
    let recs = generate_cohort(&sc, 3, &flat_table(rate), None).unwrap();
    let times: Vec<f64> = recs.iter().map(|r| r.time).collect();
    let d = ks_distance(&times, |t| 1.0 - (-rate * t).exp());
    assert!(d < dkw_epsilon(times.len(), 0.01), "KS distance {d}");
}

#[test]
fn frail_patients_die_earlier() {
    let table = reference_life_table();
    let mut base = uncensored(find_scenario("none-admin").unwrap());
    base.n = 10_000;
    base.truth = GhParams::baseline_only(EwParams::new(1.0, 1e12, 1.0).unwrap(), 3);
    let mut frail = base.clone();
    frail.frailty = FrailtyLaw::LogNormal(LogNormalFrailtyParams::new(10f64.ln(), 1e-9).unwrap());
    let t1: Vec<f64> = generate_cohort(&base, 0, &table, None).unwrap().iter().map(|r| r.time).collect();
    let t10: Vec<f64> = generate_cohort(&frail, 0, &table, None).unwrap().iter().map(|r| r.time).collect();
    assert!(median(t10) < 0.5 * median(t1));
}

#[test]
fn administrative_censoring_is_about_a_quarter() {
    let table = reference_life_table();
    let sc = find_scenario("none-admin").unwrap();
    let recs = generate_cohort(&sc, 0, &table, None).unwrap();
    let censored = recs.iter().filter(|r| !r.status).count() as f64 / recs.len() as f64;
    assert!((censored - 0.25).abs() <= 0.03, "{censored}");
    assert!(recs.iter().all(|r| r.time <= sc.censoring.horizon));
}

#[test]
fn calibrated_dropout_reaches_thirty_percent() {
    let table = reference_life_table();
    let sc = find_scenario("none").unwrap();
    let (rate, achieved) = resolve_dropout(&sc, &table).unwrap();
    let achieved = achieved.unwrap();
    assert!((0.295..=0.305).contains(&achieved), "{achieved}");
    let recs = generate_cohort(&sc, 0, &table, rate).unwrap();
    let censored = recs.iter().filter(|r| !r.status).count() as f64 / recs.len() as f64;
    assert!((censored - 0.30).abs() <= 0.03, "{censored}");
}

#[test]
fn calibration_rejects_targets_below_administrative_censoring() {
    let table = reference_life_table();
    let sc = find_scenario("wide").unwrap();
    let pilot = DropoutPilot::new(&sc, &table, PILOT_SIZE / 10, 9).unwrap();
    let admin = pilot.censoring_proportion(0.0);
    assert!(matches!(
        calibrate_dropout_rate(&pilot, admin - 0.1),
        Err(SimulationError::TargetUnreachable { .. })
    ));
    let (_, achieved) = calibrate_dropout_rate(&pilot, admin + 0.1).unwrap();
    assert!((achieved - admin - 0.1).abs() <= 0.005);
}

#[test]
fn frozen_and_advancing_years_differ_only_in_timing() {
    let table = reference_life_table();
    let mut sc = find_scenario("none-admin").unwrap();
    sc.n = 500;
    let a = generate_cohort(&sc, 1, &table, None).unwrap();
    sc.year_policy = exhaz::YearPolicy::Frozen;
    let f = generate_cohort(&sc, 1, &table, None).unwrap();
    assert_eq!(a.len(), f.len());
    assert!(a.iter().zip(&f).all(|(x, y)| x.x == y.x && x.z == y.z && x.age_diag == y.age_diag));
}

#[test]
fn study_is_identical_for_any_worker_count() {
    let table = reference_life_table();
    let mut sc = find_scenario("moderate").unwrap();
    sc.n = 400;
    sc.replicates = 3;
    sc.age_transform = AgeTransform { center: 70.0, scale: 10.0 };
    let one = run_study(&sc, &table, 1).unwrap();
    let three = run_study(&sc, &table, 3).unwrap();
    assert_eq!(format!("{:?}", one.models), format!("{:?}", three.models));
    assert_eq!(one.dropout_rate, three.dropout_rate);
    assert_eq!(one.selected, three.selected);
    assert_eq!(one.selected.iter().sum::<usize>() + one.model("M4").unwrap().failures, 3);
}
