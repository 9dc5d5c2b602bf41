//! Stratified life tables of background (all-cause) mortality.
//!
//! Rates are piecewise constant over 1-year age by 1-year calendar cells.
//! A patient diagnosed at age `A` in year `y` moves along the Lexis diagonal
//! `(A + t, y + t)`; the cumulative background hazard along that path is
//! integrated exactly, segment by segment.

use std::collections::HashMap;
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LifeTableError {
    #[error("life table has no `{0}` column")]
    MissingColumn(String),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: negative or non-finite rate {rate}")]
    NegativeRate { line: u64, rate: f64 },
    #[error("line {line}: duplicate cell age={age} year={year} strata={strata:?}")]
    DuplicateCell {
        line: u64,
        age: i32,
        year: i32,
        strata: Vec<String>,
    },
    #[error("missing cell age={age} year={year} strata={strata:?}")]
    MissingCell {
        age: i32,
        year: i32,
        strata: Vec<String>,
    },
    #[error("life table is empty")]
    Empty,
    #[error("unknown stratum {0:?}")]
    UnknownStratum(Vec<String>),
    #[error("background hazard is zero along the whole path; cannot reach cumulative hazard {target}")]
    ZeroHazardPath { target: f64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Index of a resolved stratum (a full vector of strata values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StratumId(usize);

/// Whether calendar time moves with follow-up time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YearPolicy {
    #[default]
    Advancing,
    /// Calendar year stays at the diagnosis year for the whole follow-up.
    Frozen,
}

/// A point in the (age, calendar year) plane for one stratum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexisPosition {
    pub age: f64,
    pub year: f64,
    pub stratum: StratumId,
    pub year_policy: YearPolicy,
}

impl LexisPosition {
    /// Resolves `strata` against `table`.
    pub fn new<S: AsRef<str>>(
        table: &LifeTable,
        age: f64,
        year: f64,
        strata: &[S],
    ) -> Result<Self, LifeTableError> {
        Ok(Self {
            age,
            year,
            stratum: table.stratum(strata)?,
            year_policy: YearPolicy::Advancing,
        })
    }

    pub fn with_year_policy(mut self, policy: YearPolicy) -> Self {
        self.year_policy = policy;
        self
    }

    /// The position reached after `t` years of follow-up.
    pub fn advanced(&self, t: f64) -> Self {
        let year = match self.year_policy {
            YearPolicy::Advancing => self.year + t,
            YearPolicy::Frozen => self.year,
        };
        Self {
            age: self.age + t,
            year,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct LifeTable {
    strata_columns: Vec<String>,
    age_min: i32,
    age_max: i32,
    year_min: i32,
    year_max: i32,
    strata: Vec<Vec<String>>,
    strata_index: HashMap<Vec<String>, usize>,
    // [stratum][age - age_min][year - year_min]
    rates: Vec<f64>,
}

impl LifeTable {
    /// Builds a complete table from a rate function.
    ///
    /// `strata` lists every stratum as a vector of values, one per strata column.
    pub fn from_fn<F>(
        strata_columns: Vec<String>,
        strata: Vec<Vec<String>>,
        ages: (i32, i32),
        years: (i32, i32),
        mut rate: F,
    ) -> Result<Self, LifeTableError>
    where
        F: FnMut(i32, i32, &[String]) -> f64,
    {
        if strata.is_empty() || ages.0 > ages.1 || years.0 > years.1 {
            return Err(LifeTableError::Empty);
        }
        let mut strata_index = HashMap::new();
        for (i, s) in strata.iter().enumerate() {
            if s.len() != strata_columns.len() {
                return Err(LifeTableError::MalformedRow {
                    line: 0,
                    reason: format!(
                        "stratum {s:?} has {} values, expected {}",
                        s.len(),
                        strata_columns.len()
                    ),
                });
            }
            strata_index.insert(s.clone(), i);
        }
        let mut rates = Vec::new();
        for s in &strata {
            for age in ages.0..=ages.1 {
                for year in years.0..=years.1 {
                    let r = rate(age, year, s);
                    if !(r.is_finite() && r >= 0.0) {
                        return Err(LifeTableError::NegativeRate { line: 0, rate: r });
                    }
                    rates.push(r);
                }
            }
        }
        Ok(Self {
            strata_columns,
            age_min: ages.0,
            age_max: ages.1,
            year_min: years.0,
            year_max: years.1,
            strata,
            strata_index,
            rates,
        })
    }

    /// A single-stratum table with the same rate everywhere.
    pub fn constant(rate: f64, ages: (i32, i32), years: (i32, i32)) -> Result<Self, LifeTableError> {
        Self::from_fn(Vec::new(), vec![Vec::new()], ages, years, |_, _, _| rate)
    }

    /// Reads a `age,year,<strata...>,rate` CSV. Every column other than
    /// `age`, `year` and `rate` is taken as a strata column, in header order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LifeTableError> {
        Self::read(reader, None)
    }

    /// Like [`LifeTable::from_csv`] but only the named strata columns are used.
    pub fn from_csv_with_strata<R: Read, S: AsRef<str>>(
        reader: R,
        strata_columns: &[S],
    ) -> Result<Self, LifeTableError> {
        let cols: Vec<String> = strata_columns.iter().map(|s| s.as_ref().trim().to_string()).collect();
        Self::read(reader, Some(cols))
    }

    fn read<R: Read>(reader: R, strata_columns: Option<Vec<String>>) -> Result<Self, LifeTableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| LifeTableError::MissingColumn(name.to_string()))
        };
        let age_col = find("age")?;
        let year_col = find("year")?;
        let rate_col = find("rate")?;
        let strata_columns = match strata_columns {
            Some(c) => c,
            None => header
                .iter()
                .filter(|h| !matches!(h.as_str(), "age" | "year" | "rate"))
                .cloned()
                .collect(),
        };
        let strata_cols = strata_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>, _>>()?;

        struct Row {
            line: u64,
            age: i32,
            year: i32,
            strata: Vec<String>,
            rate: f64,
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(LifeTableError::MalformedRow {
                    line,
                    reason: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let int_field = |col: usize, what: &str| {
                record[col].parse::<i32>().map_err(|_| LifeTableError::MalformedRow {
                    line,
                    reason: format!("{what} `{}` is not an integer", &record[col]),
                })
            };
            let age = int_field(age_col, "age")?;
            let year = int_field(year_col, "year")?;
            let rate: f64 = record[rate_col].parse().map_err(|_| LifeTableError::MalformedRow {
                line,
                reason: format!("rate `{}` is not a number", &record[rate_col]),
            })?;
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(LifeTableError::NegativeRate { line, rate });
            }
            let strata = strata_cols.iter().map(|&c| record[c].to_string()).collect();
            rows.push(Row {
                line,
                age,
                year,
                strata,
                rate,
            });
        }
        if rows.is_empty() {
            return Err(LifeTableError::Empty);
        }

        let age_min = rows.iter().map(|r| r.age).min().unwrap_or(0);
        let age_max = rows.iter().map(|r| r.age).max().unwrap_or(0);
        let year_min = rows.iter().map(|r| r.year).min().unwrap_or(0);
        let year_max = rows.iter().map(|r| r.year).max().unwrap_or(0);

        let mut strata: Vec<Vec<String>> = Vec::new();
        let mut strata_index: HashMap<Vec<String>, usize> = HashMap::new();
        for r in &rows {
            if !strata_index.contains_key(&r.strata) {
                strata_index.insert(r.strata.clone(), strata.len());
                strata.push(r.strata.clone());
            }
        }

        let n_age = (age_max - age_min + 1) as usize;
        let n_year = (year_max - year_min + 1) as usize;
        let mut rates = vec![f64::NAN; strata.len() * n_age * n_year];
        for r in rows {
            let s = strata_index[&r.strata];
            let idx = (s * n_age + (r.age - age_min) as usize) * n_year + (r.year - year_min) as usize;
            if !rates[idx].is_nan() {
                return Err(LifeTableError::DuplicateCell {
                    line: r.line,
                    age: r.age,
                    year: r.year,
                    strata: r.strata,
                });
            }
            rates[idx] = r.rate;
        }
        if let Some(idx) = rates.iter().position(|r| r.is_nan()) {
            let year = (idx % n_year) as i32 + year_min;
            let age = ((idx / n_year) % n_age) as i32 + age_min;
            let s = idx / (n_year * n_age);
            return Err(LifeTableError::MissingCell {
                age,
                year,
                strata: strata[s].clone(),
            });
        }

        Ok(Self {
            strata_columns,
            age_min,
            age_max,
            year_min,
            year_max,
            strata,
            strata_index,
            rates,
        })
    }

    pub fn strata_columns(&self) -> &[String] {
        &self.strata_columns
    }

    pub fn age_range(&self) -> (i32, i32) {
        (self.age_min, self.age_max)
    }

    pub fn year_range(&self) -> (i32, i32) {
        (self.year_min, self.year_max)
    }

    pub fn strata(&self) -> &[Vec<String>] {
        &self.strata
    }

    pub fn cell_count(&self) -> usize {
        self.rates.len()
    }

    /// Resolves a vector of strata values. Values are compared after trimming.
    pub fn stratum<S: AsRef<str>>(&self, values: &[S]) -> Result<StratumId, LifeTableError> {
        let key: Vec<String> = values.iter().map(|v| v.as_ref().trim().to_string()).collect();
        self.strata_index
            .get(&key)
            .map(|&i| StratumId(i))
            .ok_or(LifeTableError::UnknownStratum(key))
    }

    /// Rate of the cell `(age, year)`, clamped to the table's ranges.
    pub fn cell_rate(&self, stratum: StratumId, age: i64, year: i64) -> f64 {
        let n_age = (self.age_max - self.age_min + 1) as usize;
        let n_year = (self.year_max - self.year_min + 1) as usize;
        let a = (age.clamp(self.age_min as i64, self.age_max as i64) - self.age_min as i64) as usize;
        let y = (year.clamp(self.year_min as i64, self.year_max as i64) - self.year_min as i64) as usize;
        self.rates[(stratum.0 * n_age + a) * n_year + y]
    }

    /// Background hazard at a Lexis position.
    pub fn rate_at(&self, pos: &LexisPosition) -> f64 {
        self.cell_rate(pos.stratum, pos.age.floor() as i64, pos.year.floor() as i64)
    }

    /// `H_P(A + t, y + t) - H_P(A, y)` along the diagonal starting at `start`.
    pub fn cum_hazard_increment(&self, start: &LexisPosition, t: f64) -> f64 {
        let mut total = 0.0;
        self.walk(start, |rate, from, to| {
            if to >= t {
                total += rate * (t - from);
                true
            } else {
                total += rate * (to - from);
                false
            }
        });
        total
    }

    /// Follow-up time at which the cumulative background hazard reaches `-ln(u)`.
    pub fn other_cause_time_inverse(&self, start: &LexisPosition, u: f64) -> Result<f64, LifeTableError> {
        self.time_to_cum_hazard(start, -u.ln())
    }

    /// Follow-up time at which the cumulative background hazard from `start`
    /// reaches `target`. Beyond the table the boundary rates are extended.
    pub fn time_to_cum_hazard(&self, start: &LexisPosition, target: f64) -> Result<f64, LifeTableError> {
        if target <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let mut found = None;
        self.walk(start, |rate, from, to| {
            let mass = rate * (to - from);
            if rate > 0.0 && acc + mass >= target {
                found = Some(from + (target - acc) / rate);
                true
            } else {
                acc += mass;
                !to.is_finite()
            }
        });
        found.ok_or(LifeTableError::ZeroHazardPath { target })
    }

    /// Visits the constant-rate segments `[from, to)` of the path from `start`
    /// until `visit` returns true. Once both coordinates are past the table's
    /// last cells the final segment is unbounded (`to = inf`).
    fn walk<F>(&self, start: &LexisPosition, mut visit: F)
    where
        F: FnMut(f64, f64, f64) -> bool,
    {
        let advancing = start.year_policy == YearPolicy::Advancing;
        let mut ia = start.age.floor() as i64;
        let mut iy = start.year.floor() as i64;
        let mut next_age = (ia + 1) as f64 - start.age;
        let mut next_year = if advancing {
            (iy + 1) as f64 - start.year
        } else {
            f64::INFINITY
        };
        let mut from = 0.0;
        loop {
            let rate = self.cell_rate(start.stratum, ia, iy);
            let age_done = ia >= self.age_max as i64;
            let year_done = !advancing || iy >= self.year_max as i64;
            let to = if age_done && year_done {
                f64::INFINITY
            } else {
                // Crossings that do not change the clamped cell are merged.
                let a = if age_done { f64::INFINITY } else { next_age };
                let y = if year_done { f64::INFINITY } else { next_year };
                a.min(y)
            };
            if visit(rate, from, to) || !to.is_finite() {
                return;
            }
            if to == next_age {
                ia += 1;
                next_age = (ia + 1) as f64 - start.age;
            }
            if to == next_year {
                iy += 1;
                next_year = (iy + 1) as f64 - start.year;
            }
            from = to;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> Result<LifeTable, LifeTableError> {
        LifeTable::from_csv(csv.as_bytes())
    }

    fn three_cell_table() -> LifeTable {
        // Only the three cells visited by the path matter; others set to 1.
        LifeTable::from_fn(Vec::new(), vec![Vec::new()], (70, 71), (2012, 2013), |a, y, _| {
            match (a, y) {
                (70, 2012) => 0.02,
                (71, 2012) => 0.03,
                (71, 2013) => 0.04,
                _ => 1.0,
            }
        })
        .unwrap()
    }

    #[test]
    fn loads_two_row_table() {
        let t = table("age,year,sex,rate\n70,2012,0,0.02\n71,2012,0,0.03\n70,2013,0,0.02\n71,2013,0,0.03\n").unwrap();
        assert_eq!(t.age_range(), (70, 71));
        assert_eq!(t.year_range(), (2012, 2013));
        assert_eq!(t.strata_columns(), &["sex".to_string()]);
    }

    #[test]
    fn diagonal_pair_without_off_diagonal_cells_is_missing() {
        let err = table("age,year,sex,rate\n70,2012,0,0.02\n71,2013,0,0.03\n").unwrap_err();
        assert!(matches!(err, LifeTableError::MissingCell { .. }), "{err}");
    }

    #[test]
    fn rejects_negative_rate() {
        let err = table("age,year,sex,rate\n70,2012,0,-0.1\n").unwrap_err();
        assert!(matches!(err, LifeTableError::NegativeRate { .. }));
    }

    #[test]
    fn rejects_duplicates_and_malformed_rows() {
        let dup = table("age,year,rate\n70,2012,0.1\n70,2012,0.2\n").unwrap_err();
        assert!(matches!(dup, LifeTableError::DuplicateCell { line: 3, .. }), "{dup}");
        let bad = table("age,year,rate\n70.5,2012,0.1\n").unwrap_err();
        assert!(matches!(bad, LifeTableError::MalformedRow { .. }));
        let short = table("age,year,rate\n70,2012\n").unwrap_err();
        assert!(matches!(short, LifeTableError::MalformedRow { .. }));
        let missing = table("age,rate\n70,0.1\n").unwrap_err();
        assert!(matches!(missing, LifeTableError::MissingColumn(ref c) if c == "year"));
    }

    #[test]
    fn ignores_comment_lines_and_trims_strata() {
        let t = table("# national table\nage,year,sex,rate\n70,2012, 1 ,0.02\n").unwrap();
        let pos = LexisPosition::new(&t, 70.2, 2012.9, &["1"]).unwrap();
        assert_eq!(t.rate_at(&pos), 0.02);
    }

    #[test]
    fn uk_style_table_has_all_cells() {
        let mut csv = String::from("age,year,sex,rate\n");
        for sex in 0..2 {
            for age in 0..100 {
                for year in 2010..2017 {
                    csv.push_str(&format!("{age},{year},{sex},{}\n", 1e-4 * (age + 1) as f64));
                }
            }
        }
        let t = table(&csv).unwrap();
        assert_eq!(t.cell_count(), 1400);
        for sex in ["0", "1"] {
            for age in 0..100 {
                for year in 2010..2017 {
                    let pos = LexisPosition::new(&t, age as f64 + 0.5, year as f64 + 0.5, &[sex]).unwrap();
                    assert_eq!(t.rate_at(&pos), 1e-4 * (age + 1) as f64);
                }
            }
        }
    }

    #[test]
    fn rate_is_constant_within_cell_and_clamped_outside() {
        let t = LifeTable::from_fn(
            vec!["sex".into()],
            vec![vec!["0".into()], vec!["1".into()]],
            (0, 99),
            (2010, 2016),
            |a, y, s| 1e-3 * a as f64 + 1e-5 * (y - 2010) as f64 + if s[0] == "1" { 0.5 } else { 0.0 },
        )
        .unwrap();
        let pos = LexisPosition::new(&t, 70.4, 2012.4, &["0"]).unwrap();
        assert_eq!(t.rate_at(&pos), t.cell_rate(pos.stratum, 70, 2012));
        let old = LexisPosition::new(&t, 105.0, 2030.0, &["0"]).unwrap();
        assert_eq!(t.rate_at(&old), t.cell_rate(old.stratum, 99, 2016));
        let young = LexisPosition::new(&t, -3.0, 1990.0, &["1"]).unwrap();
        assert_eq!(t.rate_at(&young), t.cell_rate(young.stratum, 0, 2010));
        assert!(matches!(
            LexisPosition::new(&t, 70.0, 2012.0, &["2"]),
            Err(LifeTableError::UnknownStratum(_))
        ));
    }

    #[test]
    fn constant_rate_increment_and_inverse() {
        let t = LifeTable::constant(0.02, (0, 99), (2000, 2020)).unwrap();
        let s: [&str; 0] = [];
        let pos = LexisPosition::new(&t, 60.3, 2005.7, &s).unwrap();
        assert!((t.cum_hazard_increment(&pos, 3.0) - 0.06).abs() < 1e-15);
        assert_eq!(t.cum_hazard_increment(&pos, 0.0), 0.0);
        let back = t.other_cause_time_inverse(&pos, (-0.06f64).exp()).unwrap();
        assert!((back - 3.0).abs() < 1e-12);
        let tiny = t.other_cause_time_inverse(&pos, 1.0 - 1e-12).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-9);
    }

    #[test]
    fn three_segment_path() {
        let t = three_cell_table();
        let s: [&str; 0] = [];
        let pos = LexisPosition::new(&t, 70.5, 2012.0, &s).unwrap();
        let h = t.cum_hazard_increment(&pos, 1.2);
        assert!((h - 0.033).abs() < 1e-15, "{h}");
        let back = t.other_cause_time_inverse(&pos, (-0.033f64).exp()).unwrap();
        assert!((back - 1.2).abs() < 1e-12, "{back}");
    }

    #[test]
    fn frozen_year_stays_in_diagnosis_column() {
        let t = three_cell_table();
        let s: [&str; 0] = [];
        let pos = LexisPosition::new(&t, 70.5, 2012.0, &s)
            .unwrap()
            .with_year_policy(YearPolicy::Frozen);
        // 0.5 years in (70, 2012) then 0.7 years in (71, 2012).
        let h = t.cum_hazard_increment(&pos, 1.2);
        assert!((h - (0.02 * 0.5 + 0.03 * 0.7)).abs() < 1e-15);
        assert_eq!(t.rate_at(&pos.advanced(1.2)), 0.03);
    }

    #[test]
    fn extrapolates_past_last_age_and_reports_zero_paths() {
        let t = LifeTable::from_fn(Vec::new(), vec![Vec::new()], (0, 99), (2000, 2001), |a, _, _| {
            if a == 99 { 0.5 } else { 0.0 }
        })
        .unwrap();
        let s: [&str; 0] = [];
        let pos = LexisPosition::new(&t, 98.0, 2000.0, &s).unwrap();
        // 1 year at rate 0, then rate 0.5 forever.
        let time = t.time_to_cum_hazard(&pos, 1e4).unwrap();
        assert!((time - (1.0 + 2e4)).abs() < 1e-6);

        let zero = LifeTable::constant(0.0, (0, 10), (2000, 2001)).unwrap();
        let pos = LexisPosition::new(&zero, 5.0, 2000.0, &s).unwrap();
        assert!(matches!(
            zero.other_cause_time_inverse(&pos, 0.5),
            Err(LifeTableError::ZeroHazardPath { .. })
        ));
    }
}
