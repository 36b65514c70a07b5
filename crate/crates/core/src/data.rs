//! Observed per-(race, county) counts.

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cell ({county}, {race}): cases {cases} exceed tests {tests}")]
    CasesExceedTests {
        county: String,
        race: Race,
        cases: u64,
        tests: u64,
    },
    #[error("cell ({county}, {race}): population must be at least 1")]
    EmptyPopulation { county: String, race: Race },
    #[error("duplicate cell ({county}, {race})")]
    DuplicateCell { county: String, race: Race },
    #[error("cell references race index {race} or county index {county} outside the index sets")]
    IndexOutOfRange { race: usize, county: usize },
    #[error("unknown race `{0}`")]
    UnknownRace(String),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Output groups of the analysis. White is the reference group for ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
    Hispanic,
}

impl Race {
    pub const ALL: [Race; 3] = [Race::White, Race::Black, Race::Hispanic];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Hispanic => "hispanic",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Ok(Race::White),
            "black" => Ok(Race::Black),
            "hispanic" => Ok(Race::Hispanic),
            other => Err(DataError::UnknownRace(other.to_string())),
        }
    }
}

/// One row of counts keyed by labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub county_id: String,
    pub race: Race,
    pub population: u64,
    pub tests: u64,
    pub cases: u64,
}

/// One row of counts keyed by positions in [`ObservedCounts::races`] and
/// [`ObservedCounts::counties`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub race: usize,
    pub county: usize,
    pub population: u64,
    pub tests: u64,
    pub cases: u64,
}

/// Validated counts with their race and county index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCounts {
    races: Vec<Race>,
    counties: Vec<String>,
    cells: Vec<Cell>,
}

impl ObservedCounts {
    /// Builds counts from labelled records. Races and counties are the sorted
    /// sets appearing in the records; cells are ordered by county then race.
    pub fn from_records(records: Vec<CellRecord>) -> Result<Self, DataError> {
        let races: Vec<Race> = records
            .iter()
            .map(|r| r.race)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let counties: Vec<String> = records
            .iter()
            .map(|r| r.county_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cells = records
            .iter()
            .map(|r| Cell {
                race: races.binary_search(&r.race).expect("race collected above"),
                county: counties
                    .binary_search(&r.county_id)
                    .expect("county collected above"),
                population: r.population,
                tests: r.tests,
                cases: r.cases,
            })
            .collect();
        Self::new(races, counties, cells)
    }

    /// Builds counts over explicit index sets. Counties or races without any
    /// cell are allowed; cells are re-sorted by county then race.
    pub fn new(
        races: Vec<Race>,
        counties: Vec<String>,
        mut cells: Vec<Cell>,
    ) -> Result<Self, DataError> {
        cells.sort_by_key(|c| (c.county, c.race));
        for (i, cell) in cells.iter().enumerate() {
            if cell.race >= races.len() || cell.county >= counties.len() {
                return Err(DataError::IndexOutOfRange {
                    race: cell.race,
                    county: cell.county,
                });
            }
            let county = || counties[cell.county].clone();
            let race = races[cell.race];
            if cell.population == 0 {
                return Err(DataError::EmptyPopulation {
                    county: county(),
                    race,
                });
            }
            if cell.cases > cell.tests {
                return Err(DataError::CasesExceedTests {
                    county: county(),
                    race,
                    cases: cell.cases,
                    tests: cell.tests,
                });
            }
            if i > 0 && (cells[i - 1].county, cells[i - 1].race) == (cell.county, cell.race) {
                return Err(DataError::DuplicateCell {
                    county: county(),
                    race,
                });
            }
        }
        Ok(Self {
            races,
            counties,
            cells,
        })
    }

    pub fn races(&self) -> &[Race] {
        &self.races
    }

    pub fn counties(&self) -> &[String] {
        &self.counties
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_races(&self) -> usize {
        self.races.len()
    }

    pub fn num_counties(&self) -> usize {
        self.counties.len()
    }

    pub fn race_index(&self, race: Race) -> Option<usize> {
        self.races.iter().position(|&r| r == race)
    }

    pub fn records(&self) -> Vec<CellRecord> {
        self.cells
            .iter()
            .map(|c| CellRecord {
                county_id: self.counties[c.county].clone(),
                race: self.races[c.race],
                population: c.population,
                tests: c.tests,
                cases: c.cases,
            })
            .collect()
    }

    /// Total observed tests per county across all races.
    pub fn county_test_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.counties.len()];
        for c in &self.cells {
            totals[c.county] += c.tests;
        }
        totals
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let csv_err = |source| DataError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let records = reader
            .deserialize::<CellRecord>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Self::from_records(records)
    }

    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for record in self.records() {
            writer.serialize(record).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(county: &str, race: Race, n: u64, t: u64, c: u64) -> CellRecord {
        CellRecord {
            county_id: county.into(),
            race,
            population: n,
            tests: t,
            cases: c,
        }
    }

    #[test]
    fn records_are_indexed_and_sorted() {
        let data = ObservedCounts::from_records(vec![
            record("b", Race::Hispanic, 10, 3, 1),
            record("a", Race::White, 20, 5, 2),
            record("b", Race::White, 30, 0, 0),
        ])
        .unwrap();
        assert_eq!(data.races(), &[Race::White, Race::Hispanic]);
        assert_eq!(data.counties(), &["a".to_string(), "b".to_string()]);
        let keys: Vec<_> = data.cells().iter().map(|c| (c.county, c.race)).collect();
        assert_eq!(keys, vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(data.county_test_totals(), vec![5, 3]);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = ObservedCounts::from_records(vec![record("a", Race::White, 10, 3, 4)]);
        assert!(matches!(bad, Err(DataError::CasesExceedTests { .. })));
        let bad = ObservedCounts::from_records(vec![record("a", Race::White, 0, 0, 0)]);
        assert!(matches!(bad, Err(DataError::EmptyPopulation { .. })));
        let bad = ObservedCounts::from_records(vec![
            record("a", Race::White, 10, 3, 1),
            record("a", Race::White, 10, 3, 1),
        ]);
        assert!(matches!(bad, Err(DataError::DuplicateCell { .. })));
        let bad = ObservedCounts::new(
            vec![Race::White],
            vec!["a".into()],
            vec![Cell {
                race: 1,
                county: 0,
                population: 1,
                tests: 0,
                cases: 0,
            }],
        );
        assert!(matches!(bad, Err(DataError::IndexOutOfRange { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let data = ObservedCounts::from_records(vec![
            record("x1", Race::Black, 500, 40, 7),
            record("x1", Race::White, 900, 80, 3),
        ])
        .unwrap();
        let text = data.to_csv_string();
        assert!(text.starts_with("county_id,race,population,tests,cases\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        data.write_csv(&path).unwrap();
        assert_eq!(ObservedCounts::read_csv(&path).unwrap(), data);
    }

    #[test]
    fn race_parsing() {
        assert_eq!("Hispanic".parse::<Race>().unwrap(), Race::Hispanic);
        assert!("other".parse::<Race>().is_err());
    }
}
