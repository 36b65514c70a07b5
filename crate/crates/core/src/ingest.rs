//! Loading raw county-level counts reported separately by race and by
//! ethnicity, and turning them into per-group cells.
//!
//! Input files, UTF-8 with a header row:
//!
//! * `tests.csv`, `cases.csv`: `county_id,total,white,black,frac_hispanic_of_known_ethnicity,frac_race_known`
//! * `census.csv`: `county_id,pop_nh_white,pop_nh_black,pop_hispanic`
//!
//! Three processing methods are available. With `w`, `b` the white and Black
//! counts by race, `c` the total, `h` the Hispanic share among records with
//! known ethnicity and `k` the share with known race:
//!
//! | method               | white              | Black            | Hispanic |
//! |----------------------|--------------------|------------------|----------|
//! | `original`           | `w (1 - h) / k`    | `b (1 - h) / k`  | `c h`    |
//! | `raw_counts`         | `w`                | `b`              | `c h`    |
//! | `subtract_ethnicity` | `w - c h`          | `b`              | `c h`    |
//!
//! Results are rounded half away from zero, negatives are clamped to zero,
//! and cases are capped at tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CellRecord, DataError, ObservedCounts, Race};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("{path}, line {line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}, line {line}: duplicate county `{county}`")]
    DuplicateCounty {
        path: String,
        line: u64,
        county: String,
    },
    #[error("county `{0}` absent from census")]
    MissingCensus(String),
    #[error("county `{county}` present in one count file but absent from {file}")]
    MissingCounts { county: String, file: &'static str },
    #[error("county `{county}`: census field `{field}` is missing")]
    MissingPopulation { county: String, field: &'static str },
    #[error("county `{0}`: no records with known race, cannot rescale under method `original`")]
    NoKnownRace(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How race-only and ethnicity-only counts are combined into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingMethod {
    Original,
    RawCounts,
    SubtractEthnicity,
}

impl ProcessingMethod {
    pub const ALL: [ProcessingMethod; 3] = [
        ProcessingMethod::Original,
        ProcessingMethod::RawCounts,
        ProcessingMethod::SubtractEthnicity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessingMethod::Original => "original",
            ProcessingMethod::RawCounts => "raw_counts",
            ProcessingMethod::SubtractEthnicity => "subtract_ethnicity",
        }
    }
}

impl fmt::Display for ProcessingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(ProcessingMethod::Original),
            "raw" | "raw_counts" => Ok(ProcessingMethod::RawCounts),
            "subtract" | "subtract_ethnicity" => Ok(ProcessingMethod::SubtractEthnicity),
            other => Err(format!(
                "unknown processing method `{other}` (expected original, raw or subtract)"
            )),
        }
    }
}

/// One row of `tests.csv` or `cases.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCounts {
    pub total: f64,
    pub white: f64,
    pub black: f64,
    pub frac_hispanic: f64,
    pub frac_race_known: f64,
}

/// Census populations of the three output groups. `None` marks an empty field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub nh_white: Option<u64>,
    pub nh_black: Option<u64>,
    pub hispanic: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCountyRecord {
    pub county_id: String,
    pub cases: RawCounts,
    pub tests: RawCounts,
    pub census: Census,
}

/// Processed counts of one county, in `Race::ALL` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCounts {
    pub county_id: String,
    pub cases: [u64; 3],
    pub tests: [u64; 3],
}

fn group_values(counts: &RawCounts, method: ProcessingMethod) -> [f64; 3] {
    let hispanic = counts.total * counts.frac_hispanic;
    match method {
        ProcessingMethod::Original => {
            let scale = (1.0 - counts.frac_hispanic) / counts.frac_race_known;
            [counts.white * scale, counts.black * scale, hispanic]
        }
        ProcessingMethod::RawCounts => [counts.white, counts.black, hispanic],
        ProcessingMethod::SubtractEthnicity => [counts.white - hispanic, counts.black, hispanic],
    }
}

fn round_nonnegative(value: f64, county: &str, what: &str, race: Race) -> u64 {
    let rounded = value.round();
    if rounded < 0.0 {
        warn!("county {county}: {race} {what} computed as {value:.3}; clamped to 0");
        0
    } else {
        rounded as u64
    }
}

/// Applies one processing method to a county's raw counts.
pub fn process_county(
    record: &RawCountyRecord,
    method: ProcessingMethod,
) -> Result<GroupCounts, IngestError> {
    if method == ProcessingMethod::Original
        && (record.cases.frac_race_known <= 0.0 || record.tests.frac_race_known <= 0.0)
    {
        return Err(IngestError::NoKnownRace(record.county_id.clone()));
    }
    let id = record.county_id.as_str();
    let cases_raw = group_values(&record.cases, method);
    let tests_raw = group_values(&record.tests, method);
    let mut cases = [0; 3];
    let mut tests = [0; 3];
    for (i, race) in Race::ALL.into_iter().enumerate() {
        tests[i] = round_nonnegative(tests_raw[i], id, "tests", race);
        cases[i] = round_nonnegative(cases_raw[i], id, "cases", race);
        if cases[i] > tests[i] {
            warn!(
                "county {id}: {race} cases {} exceed tests {}; cases reduced to tests",
                cases[i], tests[i]
            );
            cases[i] = tests[i];
        }
    }
    Ok(GroupCounts {
        county_id: record.county_id.clone(),
        cases,
        tests,
    })
}

/// Counties kept by the population filter, and the share of each group's
/// census population they hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSummary {
    pub min_population: u64,
    pub counties_in: usize,
    pub counties_retained: usize,
    /// Retained share of the population, `Race::ALL` order; `None` when the
    /// input population of a group is zero.
    pub retained_population_share: [Option<f64>; 3],
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "retained {} of {} counties (Black and Hispanic populations >= {})",
            self.counties_retained, self.counties_in, self.min_population
        )?;
        for (race, share) in Race::ALL.iter().zip(self.retained_population_share) {
            match share {
                Some(s) => write!(f, "; {race} {:.1}%", 100.0 * s)?,
                None => write!(f, "; {race} n/a")?,
            }
        }
        Ok(())
    }
}

fn populations(record: &RawCountyRecord) -> Result<[u64; 3], IngestError> {
    let get = |value: Option<u64>, field: &'static str| {
        value.ok_or_else(|| IngestError::MissingPopulation {
            county: record.county_id.clone(),
            field,
        })
    };
    Ok([
        get(record.census.nh_white, "pop_nh_white")?,
        get(record.census.nh_black, "pop_nh_black")?,
        get(record.census.hispanic, "pop_hispanic")?,
    ])
}

/// Keeps counties whose Black and Hispanic populations are both at least
/// `min_population`.
pub fn filter_counties(
    records: Vec<RawCountyRecord>,
    min_population: u64,
) -> Result<(Vec<RawCountyRecord>, FilterSummary), IngestError> {
    let counties_in = records.len();
    let mut totals = [0u64; 3];
    let mut kept_totals = [0u64; 3];
    let mut kept = Vec::new();
    for record in records {
        let pops = populations(&record)?;
        for (t, p) in totals.iter_mut().zip(pops) {
            *t += p;
        }
        if pops[1] >= min_population && pops[2] >= min_population {
            for (t, p) in kept_totals.iter_mut().zip(pops) {
                *t += p;
            }
            kept.push(record);
        }
    }
    let mut share = [None; 3];
    for i in 0..3 {
        if totals[i] > 0 {
            share[i] = Some(kept_totals[i] as f64 / totals[i] as f64);
        }
    }
    let summary = FilterSummary {
        min_population,
        counties_in,
        counties_retained: kept.len(),
        retained_population_share: share,
    };
    info!("{summary}");
    Ok((kept, summary))
}

#[derive(Debug, Deserialize, Serialize)]
struct CountsRow {
    county_id: String,
    total: f64,
    white: f64,
    black: f64,
    frac_hispanic_of_known_ethnicity: f64,
    frac_race_known: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct CensusRow {
    county_id: String,
    pop_nh_white: Option<u64>,
    pop_nh_black: Option<u64>,
    pop_hispanic: Option<u64>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>, IngestError> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Csv {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv {
            path: display.clone(),
            message: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| IngestError::Row {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| IngestError::Row {
                path: display.clone(),
                line,
                message: e.to_string(),
            })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn read_counts(path: &Path) -> Result<BTreeMap<String, RawCounts>, IngestError> {
    let display = path.display().to_string();
    let mut out = BTreeMap::new();
    for (line, row) in read_rows::<CountsRow>(path)? {
        let bad = |message: String| IngestError::Row {
            path: display.clone(),
            line,
            message,
        };
        for (name, v) in [
            ("total", row.total),
            ("white", row.white),
            ("black", row.black),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be a nonnegative count, got {v}")));
            }
        }
        if row.white > row.total || row.black > row.total {
            return Err(bad("per-race counts exceed the total".into()));
        }
        for (name, v) in [
            (
                "frac_hispanic_of_known_ethnicity",
                row.frac_hispanic_of_known_ethnicity,
            ),
            ("frac_race_known", row.frac_race_known),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let counts = RawCounts {
            total: row.total,
            white: row.white,
            black: row.black,
            frac_hispanic: row.frac_hispanic_of_known_ethnicity,
            frac_race_known: row.frac_race_known,
        };
        if out.insert(row.county_id.clone(), counts).is_some() {
            return Err(IngestError::DuplicateCounty {
                path: display,
                line,
                county: row.county_id,
            });
        }
    }
    Ok(out)
}

fn read_census(path: &Path) -> Result<BTreeMap<String, Census>, IngestError> {
    let display = path.display().to_string();
    let mut out = BTreeMap::new();
    for (line, row) in read_rows::<CensusRow>(path)? {
        let census = Census {
            nh_white: row.pop_nh_white,
            nh_black: row.pop_nh_black,
            hispanic: row.pop_hispanic,
        };
        if out.insert(row.county_id.clone(), census).is_some() {
            return Err(IngestError::DuplicateCounty {
                path: display,
                line,
                county: row.county_id,
            });
        }
    }
    Ok(out)
}

/// Reads and joins the three input files, sorted by county.
pub fn read_raw(
    tests_path: &Path,
    cases_path: &Path,
    census_path: &Path,
) -> Result<Vec<RawCountyRecord>, IngestError> {
    let mut tests = read_counts(tests_path)?;
    let mut cases = read_counts(cases_path)?;
    let mut census = read_census(census_path)?;
    let ids: BTreeSet<String> = tests.keys().chain(cases.keys()).cloned().collect();
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let t = tests
            .remove(&id)
            .ok_or_else(|| IngestError::MissingCounts {
                county: id.clone(),
                file: "tests",
            })?;
        let c = cases
            .remove(&id)
            .ok_or_else(|| IngestError::MissingCounts {
                county: id.clone(),
                file: "cases",
            })?;
        let pop = census
            .remove(&id)
            .ok_or_else(|| IngestError::MissingCensus(id.clone()))?;
        records.push(RawCountyRecord {
            county_id: id,
            cases: c,
            tests: t,
            census: pop,
        });
    }
    Ok(records)
}

/// Full pipeline: read, filter by population, process, and validate.
pub fn load(
    tests_path: &Path,
    cases_path: &Path,
    census_path: &Path,
    method: ProcessingMethod,
    min_population: u64,
) -> Result<(ObservedCounts, FilterSummary), IngestError> {
    let records = read_raw(tests_path, cases_path, census_path)?;
    let (kept, summary) = filter_counties(records, min_population)?;
    Ok((build_counts(&kept, method)?, summary))
}

/// Processes already-filtered records into validated counts.
pub fn build_counts(
    records: &[RawCountyRecord],
    method: ProcessingMethod,
) -> Result<ObservedCounts, IngestError> {
    let mut cells = Vec::with_capacity(3 * records.len());
    for record in records {
        let pops = populations(record)?;
        let groups = process_county(record, method)?;
        for (i, race) in Race::ALL.into_iter().enumerate() {
            cells.push(CellRecord {
                county_id: record.county_id.clone(),
                race,
                population: pops[i],
                tests: groups.tests[i],
                cases: groups.cases[i],
            });
        }
    }
    Ok(ObservedCounts::from_records(cells)?)
}

/// Writes records in the three-file input format.
pub fn write_raw(
    records: &[RawCountyRecord],
    tests_path: &Path,
    cases_path: &Path,
    census_path: &Path,
) -> Result<(), IngestError> {
    let csv_err = |path: &Path, e: csv::Error| IngestError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    for (path, pick) in [
        (
            tests_path,
            (|r: &RawCountyRecord| r.tests.clone()) as fn(&RawCountyRecord) -> RawCounts,
        ),
        (cases_path, |r: &RawCountyRecord| r.cases.clone()),
    ] {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in records {
            let c = pick(r);
            writer
                .serialize(CountsRow {
                    county_id: r.county_id.clone(),
                    total: c.total,
                    white: c.white,
                    black: c.black,
                    frac_hispanic_of_known_ethnicity: c.frac_hispanic,
                    frac_race_known: c.frac_race_known,
                })
                .map_err(|e| csv_err(path, e))?;
        }
        writer.flush().map_err(|e| csv_err(path, e.into()))?;
    }
    let mut writer = csv::Writer::from_path(census_path).map_err(|e| csv_err(census_path, e))?;
    for r in records {
        writer
            .serialize(CensusRow {
                county_id: r.county_id.clone(),
                pop_nh_white: r.census.nh_white,
                pop_nh_black: r.census.nh_black,
                pop_hispanic: r.census.hispanic,
            })
            .map_err(|e| csv_err(census_path, e))?;
    }
    writer.flush().map_err(|e| csv_err(census_path, e.into()))?;
    Ok(())
}
