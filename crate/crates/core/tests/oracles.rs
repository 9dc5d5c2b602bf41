//! Closed forms checked against quadrature, finite differences and bisection.

mod common;

use common::{bisect, derivative, gamma_laplace_quadrature, gamma_pdf, integrate};
use exhaz::likelihood::marginal_survival_m3;
use exhaz::params::{Correction, ModelParams};
use exhaz::{loglik, EwParams, GammaFrailtyParams, GhParams, LexisPosition, LifeTable, PatientRecord, PreparedCohort, YearPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ew_cdf(t: f64, k: f64, th: f64, a: f64) -> f64 {
    (1.0 - (-(t / th).powf(k)).exp()).powf(a)
}

fn ew_pdf(t: f64, k: f64, th: f64, a: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let u = (t / th).powf(k);
    a * k / th * (t / th).powf(k - 1.0) * (-u).exp() * (-(-u).exp_m1()).powf(a - 1.0)
}

fn random_ew(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (rng.random_range(0.3..3.0), rng.random_range(0.2..5.0), rng.random_range(0.3..4.0))
}

#[test]
fn ew_density_is_derivative_of_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (k, th, a) = random_ew(&mut rng);
        let ew = EwParams::new(k, th, a).unwrap();
        for &t in &[0.05, 0.3, 1.0, 2.5, 6.0] {
            let fd = derivative(|s| ew.cdf(s), t, 1e-6 * t);
            let pdf = ew.pdf(t);
            assert!((pdf - fd).abs() <= 1e-6 * pdf + 1e-9, "k={k} th={th} a={a} t={t}: {pdf} vs {fd}");
        }
    }
}

#[test]
fn ew_cdf_is_integral_of_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 30 {
        let (k, th, a) = random_ew(&mut rng);
        if k * a < 1.5 {
            continue;
        }
        let ew = EwParams::new(k, th, a).unwrap();
        for &t in &[0.2, 1.0, 4.0] {
            let q = integrate(|s| ew_pdf(s, k, th, a), 0.0, t, 1e-12);
            assert!((ew.cdf(t) - q).abs() < 1e-9, "{} vs {q}", ew.cdf(t));
            assert!((ew.cdf(t) - ew_cdf(t, k, th, a)).abs() < 1e-13);
        }
        checked += 1;
    }
}

#[test]
fn ew_quantiles_match_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (k, th, a) = random_ew(&mut rng);
        let ew = EwParams::new(k, th, a).unwrap();
        for &u in &[0.01, 0.5, 0.9, 0.999] {
            let t = bisect(|s| ew_cdf(s, k, th, a) - u, 0.0, 1e4);
            assert!((ew.quantile(u) - t).abs() <= 1e-9 * t.max(1.0), "u={u}: {} vs {t}", ew.quantile(u));
        }
    }
}

#[test]
fn ew_cumulative_hazard_is_integral_of_hazard() {
    let ew = EwParams::new(0.6, 1.75, 2.5).unwrap();
    for &t in &[0.1, 0.5, 1.0, 3.0, 5.0] {
        let q = integrate(|s| ew.hazard(s).unwrap(), 0.0, t, 1e-12);
        assert!((ew.cum_hazard(t).unwrap() - q).abs() < 1e-9);
        let h = ew_pdf(t, 0.6, 1.75, 2.5) / (1.0 - ew_cdf(t, 0.6, 1.75, 2.5));
        assert!((ew.hazard(t).unwrap() - h).abs() < 1e-12 * h);
    }
}

#[test]
fn gamma_density_and_laplace_transform_match_quadrature() {
    for &(mu, b) in &[(1.2, 0.02), (1.875, 0.075), (6.5, 10.0), (1.0, 1.0), (2.0, 0.5)] {
        let g = GammaFrailtyParams::new(mu, b).unwrap();
        for &r in &[0.3, 1.0, 2.5] {
            assert!((g.pdf(r) - gamma_pdf(r, mu, b)).abs() < 1e-12 * gamma_pdf(r, mu, b).max(1e-300));
        }
        for &s in &[0.0, 0.01, 0.1, 0.5, 1.0, 3.0] {
            let q = gamma_laplace_quadrature(s, mu, b);
            assert!((g.laplace(s) - q).abs() < 1e-9, "mu={mu} b={b} s={s}: {} vs {q}", g.laplace(s));
        }
    }
}

#[test]
fn gh_cumulative_hazard_is_integral_of_hazard() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (k, th, a) = random_ew(&mut rng);
        if k * a < 1.5 {
            continue;
        }
        let gh = GhParams::new(
            EwParams::new(k, th, a).unwrap(),
            (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let x = [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)];
        for &t in &[0.5, 2.0] {
            let q = integrate(|s| gh.excess_hazard(s, &x).unwrap(), 0.0, t, 1e-12);
            let h = gh.excess_cum_hazard(t, &x).unwrap();
            assert!((h - q).abs() < 1e-8 * h.max(1.0), "{h} vs {q}");
            assert!((gh.net_survival(t, &x).unwrap() - (-q).exp()).abs() < 1e-8);
        }
    }
}

fn stepped_table() -> LifeTable {
    LifeTable::from_fn(
        vec!["sex".into()],
        vec![vec!["0".into()], vec!["1".into()]],
        (40, 95),
        (1995, 2015),
        |age, year, s| {
            let base = if s[0] == "1" { 1.3 } else { 1.0 };
            base * (-9.5 + 0.09 * age as f64).exp() * (1.0 - 0.01 * (year - 1995) as f64)
        },
    )
    .unwrap()
}

fn path_integral(table: &LifeTable, start: &LexisPosition, t: f64) -> f64 {
    // Integrate cell by cell between the breakpoints of the Lexis path.
    let mut cuts = vec![0.0, t];
    for k in 0..200 {
        for offset in [start.age.fract(), start.year.fract()] {
            let c = k as f64 + 1.0 - offset;
            if c > 0.0 && c < t {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| integrate(|s| table.rate_at(&start.advanced(s)), w[0], w[1], 1e-14))
        .sum()
}

#[test]
fn background_cumulative_hazard_matches_path_quadrature() {
    let table = stepped_table();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let sex = if rng.random_bool(0.5) { "1" } else { "0" };
        let pos = LexisPosition::new(&table, rng.random_range(40.0..90.0), rng.random_range(1995.0..2014.0), &[sex]).unwrap();
        let t = rng.random_range(0.01..8.0);
        let exact = table.cum_hazard_increment(&pos, t);
        let q = path_integral(&table, &pos, t);
        assert!((exact - q).abs() < 1e-10 * exact.max(1.0), "{exact} vs {q}");

        let s = rng.random_range(0.0..t);
        let split = table.cum_hazard_increment(&pos, s) + table.cum_hazard_increment(&pos.advanced(s), t - s);
        assert!((exact - split).abs() < 1e-12 * exact.max(1.0));

        let back = table.time_to_cum_hazard(&pos, exact).unwrap();
        assert!((back - t).abs() < 1e-9, "{back} vs {t}");
        let u = rng.random_range(0.05..0.95);
        let inv = table.other_cause_time_inverse(&pos, u).unwrap();
        let bis = bisect(|x| path_integral(&table, &pos, x) + u.ln(), 0.0, 500.0);
        assert!((inv - bis).abs() < 1e-8 * bis.max(1.0), "{inv} vs {bis}");
    }
}

#[test]
fn frozen_year_path_uses_diagnosis_year_only() {
    let table = stepped_table();
    let pos = LexisPosition::new(&table, 60.3, 2000.4, &["0"]).unwrap().with_year_policy(YearPolicy::Frozen);
    let q = integrate(|s| table.cell_rate(pos.stratum, (60.3 + s).floor() as i64, 2000), 0.0, 0.7, 1e-14)
        + integrate(|s| table.cell_rate(pos.stratum, (60.3 + s).floor() as i64, 2000), 0.7, 3.0, 1e-14);
    assert!((table.cum_hazard_increment(&pos, 3.0) - q).abs() < 1e-12);
}

#[test]
fn m3_marginal_survival_matches_frailty_integral() {
    let table = LifeTable::constant(0.6, (0, 110), (1990, 2030)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &(mu, b) in &[(1.2, 0.02), (1.875, 0.075), (6.5, 10.0)] {
        let frailty = GammaFrailtyParams::new(mu, b).unwrap();
        for _ in 0..5 {
            let gh = GhParams::new(
                EwParams::new(rng.random_range(0.4..2.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)).unwrap(),
                vec![rng.random_range(-0.5..0.5)],
                vec![rng.random_range(-0.5..0.5)],
            )
            .unwrap();
            let rec = PatientRecord {
                time: 1.0,
                status: true,
                age_diag: 60.0,
                year_diag: 2000.0,
                x: vec![rng.random_range(-1.0..1.0)],
                z: vec![],
            };
            for &t in &[0.0, 0.5, 1.7, 3.3, 5.0] {
                let dh = 0.6 * t;
                let q = gamma_laplace_quadrature(dh, mu, b) * gh.net_survival(t, &rec.x).unwrap();
                let s = marginal_survival_m3(t, &rec, &gh, &frailty, &table).unwrap();
                assert!((s - q).abs() <= 1e-8, "mu={mu} b={b} t={t}: {s} vs {q}");
            }
        }
    }
}

/// Log-likelihood of one patient under a Gamma frailty, from quadrature over
/// the frailty distribution and over the background path.
fn brute_force_m3(rec: &PatientRecord, table: &LifeTable, gh: &GhParams, mu: f64, b: f64) -> f64 {
    let pos = LexisPosition::new(table, rec.age_diag, rec.year_diag, &rec.z).unwrap();
    let dh = path_integral(table, &pos, rec.time);
    let hp = table.rate_at(&pos.advanced(rec.time));
    let (k, th, a) = (gh.baseline.kappa, gh.baseline.theta, gh.baseline.alpha);
    let xb1: f64 = rec.x.iter().zip(&gh.beta1).map(|(x, b)| x * b).sum();
    let xb2: f64 = rec.x.iter().zip(&gh.beta2).map(|(x, b)| x * b).sum();
    let s = rec.time * xb1.exp();
    let he = ew_pdf(s, k, th, a) / (1.0 - ew_cdf(s, k, th, a)) * xb2.exp();
    let big_he = -(1.0 - ew_cdf(s, k, th, a)).ln() * (xb2 - xb1).exp();
    let laplace = gamma_laplace_quadrature(dh, mu, b);
    // E[G exp(-G dh)] = -d/ds E[exp(-G s)] at s = dh.
    let first_moment = -derivative(|v| gamma_laplace_quadrature(v, mu, b), dh, 1e-4);
    let hazard = hp * first_moment / laplace + he;
    let log_surv = laplace.ln() - big_he;
    if rec.status {
        hazard.ln() + log_surv
    } else {
        log_surv
    }
}

#[test]
fn m3_loglik_matches_brute_force() {
    let table = stepped_table();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let records: Vec<PatientRecord> = (0..50)
        .map(|_| PatientRecord {
            time: rng.random_range(0.05..5.0),
            status: rng.random_bool(0.7),
            age_diag: rng.random_range(45.0..85.0),
            year_diag: rng.random_range(1996.0..2008.0),
            x: vec![rng.random_range(-1.5..1.5), rng.random_range(0.0..1.0)],
            z: vec![if rng.random_bool(0.5) { "1".into() } else { "0".into() }],
        })
        .collect();
    let cohort = PreparedCohort::new(&records, &table, YearPolicy::Advancing).unwrap();
    let gh = GhParams::new(EwParams::new(0.9, 1.5, 1.8).unwrap(), vec![0.2, -0.3], vec![0.4, 0.1]).unwrap();
    for &(mu, b) in &[(1.875, 0.075), (6.5, 10.0), (1.2, 0.5)] {
        let params = ModelParams {
            gh: gh.clone(),
            correction: Correction::Frailty(GammaFrailtyParams::new(mu, b).unwrap()),
        };
        let analytic = loglik(&params, &cohort).unwrap();
        let brute: f64 = records.iter().map(|r| brute_force_m3(r, &table, &gh, mu, b)).sum();
        assert!((analytic - brute).abs() < 1e-6 * brute.abs(), "mu={mu} b={b}: {analytic} vs {brute}");
    }
}

#[test]
fn m2_loglik_matches_direct_sum() {
    let table = stepped_table();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<PatientRecord> = (0..50)
        .map(|_| PatientRecord {
            time: rng.random_range(0.05..5.0),
            status: rng.random_bool(0.6),
            age_diag: rng.random_range(45.0..85.0),
            year_diag: 2001.0,
            x: vec![rng.random_range(-1.0..1.0)],
            z: vec!["0".into()],
        })
        .collect();
    let cohort = PreparedCohort::new(&records, &table, YearPolicy::Advancing).unwrap();
    let gh = GhParams::new(EwParams::new(1.2, 2.0, 0.9).unwrap(), vec![0.3], vec![-0.2]).unwrap();
    let gamma = 1.7;
    let direct: f64 = records
        .iter()
        .map(|r| {
            let pos = LexisPosition::new(&table, r.age_diag, r.year_diag, &r.z).unwrap();
            let dh = path_integral(&table, &pos, r.time);
            let hp = table.rate_at(&pos.advanced(r.time));
            let he = gh.excess_hazard(r.time, &r.x).unwrap();
            let big_he = integrate(|s| gh.excess_hazard(s, &r.x).unwrap(), 0.0, r.time, 1e-12);
            let ev = if r.status { (gamma * hp + he).ln() } else { 0.0 };
            ev - gamma * dh - big_he
        })
        .sum();
    let params = ModelParams {
        gh,
        correction: Correction::Single { gamma },
    };
    let analytic = loglik(&params, &cohort).unwrap();
    assert!((analytic - direct).abs() < 1e-7 * direct.abs(), "{analytic} vs {direct}");
}
