//! Forward simulation from the generative model, and exact discrete
//! scenarios showing how positivity comparisons mislead.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution, Poisson};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, DataError, ObservedCounts, Race};
use crate::ingest::{Census, RawCounts, RawCountyRecord};
use crate::model::{LatentParams, Variant};
use crate::riskdist::{DiscriminantParams, RiskDistError, Threshold};
use crate::special::logit;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    RiskDist(#[from] RiskDistError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid discrete scenario: {0}")]
    Discrete(String),
}

/// True parameters of one simulated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueCell {
    pub county: usize,
    pub race: usize,
    pub population: u64,
    pub risk: DiscriminantParams,
    pub threshold: Threshold,
}

/// Known per-cell risk distributions, thresholds and populations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueScenario {
    pub races: Vec<Race>,
    pub counties: Vec<String>,
    pub cells: Vec<TrueCell>,
    pub seed: u64,
}

impl TrueScenario {
    /// Builds a scenario whose cells follow the model's additive structure.
    /// `populations` is indexed `[county][race]`.
    pub fn from_latent(
        latent: &LatentParams,
        races: Vec<Race>,
        counties: Vec<String>,
        populations: &[Vec<u64>],
        seed: u64,
    ) -> Result<Self, SynthError> {
        let mut cells = Vec::with_capacity(races.len() * counties.len());
        for (d, row) in populations.iter().enumerate().take(counties.len()) {
            for (r, &population) in row.iter().enumerate().take(races.len()) {
                cells.push(TrueCell {
                    county: d,
                    race: r,
                    population,
                    risk: latent.risk_distribution(r, d)?,
                    threshold: Threshold::new(latent.threshold(r, d))?,
                });
            }
        }
        Ok(Self {
            races,
            counties,
            cells,
            seed,
        })
    }

    /// True thresholds indexed `[race][county]`; `NaN` where no cell exists.
    pub fn threshold_grid(&self) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![f64::NAN; self.counties.len()]; self.races.len()];
        for c in &self.cells {
            grid[c.race][c.county] = c.threshold.value();
        }
        grid
    }

    /// Expected `(f, g)` for each cell, in cell order.
    pub fn rates(&self) -> Result<Vec<(f64, f64)>, RiskDistError> {
        self.cells
            .iter()
            .map(|c| {
                Ok((
                    c.risk.ccdf_above(c.threshold),
                    c.risk.mean_above(c.threshold)?,
                ))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_text()).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Renders the scenario file: `key = value` header lines, then a `[cells]`
    /// section holding a CSV table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# true scenario for forward simulation\n");
        let _ = writeln!(out, "seed = {}", self.seed);
        out.push_str("\n[cells]\ncounty_id,race,population,phi,delta,threshold\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e}",
                self.counties[c.county],
                self.races[c.race],
                c.population,
                c.risk.phi(),
                c.risk.delta(),
                c.threshold.value()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let err = |line: usize, message: String| SynthError::Parse { line, message };
        let mut seed = None;
        let mut in_cells = false;
        let mut header_seen = false;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "[cells]" {
                in_cells = true;
                continue;
            }
            if !in_cells {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| err(line_no, format!("expected key = value, got `{line}`")))?;
                match key.trim() {
                    "seed" => {
                        seed = Some(
                            value
                                .trim()
                                .parse::<u64>()
                                .map_err(|e| err(line_no, format!("seed: {e}")))?,
                        )
                    }
                    other => return Err(err(line_no, format!("unknown key `{other}`"))),
                }
                continue;
            }
            if !header_seen {
                if line != "county_id,race,population,phi,delta,threshold" {
                    return Err(err(line_no, format!("unexpected cell header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(err(
                    line_no,
                    format!("expected 6 fields, got {}", fields.len()),
                ));
            }
            let race: Race = fields[1]
                .parse()
                .map_err(|e: DataError| err(line_no, e.to_string()))?;
            let num = |k: usize| -> Result<f64, SynthError> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|e| err(line_no, format!("field {}: {e}", k + 1)))
            };
            let population = fields[2]
                .parse::<u64>()
                .map_err(|e| err(line_no, format!("population: {e}")))?;
            let risk = DiscriminantParams::new(num(3)?, num(4)?)
                .map_err(|e| err(line_no, e.to_string()))?;
            let threshold = Threshold::new(num(5)?).map_err(|e| err(line_no, e.to_string()))?;
            rows.push((fields[0].to_string(), race, population, risk, threshold));
        }
        let seed = seed.ok_or_else(|| err(0, "missing `seed`".into()))?;
        let mut races: Vec<Race> = rows.iter().map(|r| r.1).collect();
        races.sort();
        races.dedup();
        let mut counties: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        counties.sort();
        counties.dedup();
        let cells = rows
            .into_iter()
            .map(|(county, race, population, risk, threshold)| TrueCell {
                county: counties.binary_search(&county).expect("collected"),
                race: races.binary_search(&race).expect("collected"),
                population,
                risk,
                threshold,
            })
            .collect();
        Ok(Self {
            races,
            counties,
            cells,
            seed,
        })
    }
}

/// Draws tests from `Pois(n f)` and cases from `Bin(t, g)` for every cell.
pub fn simulate(scenario: &TrueScenario) -> Result<ObservedCounts, SynthError> {
    simulate_variant(scenario, Variant::Poisson)
}

/// Like [`simulate`], with tests drawn from `Bin(n, f)` under the binomial variant.
///
/// Cell `i` uses its own generator seeded with `seed ^ i`.
pub fn simulate_variant(
    scenario: &TrueScenario,
    variant: Variant,
) -> Result<ObservedCounts, SynthError> {
    let mut cells = Vec::with_capacity(scenario.cells.len());
    for (i, cell) in scenario.cells.iter().enumerate() {
        let mut rng = Pcg32::seed_from_u64(scenario.seed ^ i as u64);
        let f = cell.risk.ccdf_above(cell.threshold);
        let tests = match variant {
            Variant::Poisson => poisson(&mut rng, cell.population as f64 * f),
            Variant::Binomial => binomial(&mut rng, cell.population, f),
        };
        let cases = if tests == 0 {
            0
        } else {
            binomial(&mut rng, tests, cell.risk.mean_above(cell.threshold)?)
        };
        cells.push(Cell {
            race: cell.race,
            county: cell.county,
            population: cell.population,
            tests,
            cases,
        });
    }
    Ok(ObservedCounts::new(
        scenario.races.clone(),
        scenario.counties.clone(),
        cells,
    )?)
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng) as u64
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("valid probability")
        .sample(rng)
}

/// Expresses white, Black and Hispanic counts in the raw by-race and
/// by-ethnicity file layout.
///
/// Each county and each count file gets a known-race share `k` drawn
/// uniformly from `[0.85, 0.97]`. With `W`, `B`, `H` the group counts and
/// `h = H / (W + B + H)`, the file reports total `W + B + H`, Hispanic share
/// `h`, and race counts `W k / (1 - h)` and `B k / (1 - h)`, so the
/// `original` processing method returns the group counts unchanged.
/// Populations become the census columns.
pub fn to_raw_records(
    counts: &ObservedCounts,
    seed: u64,
) -> Result<Vec<RawCountyRecord>, SynthError> {
    let positions: Vec<usize> = Race::ALL
        .iter()
        .map(|&r| {
            counts
                .race_index(r)
                .ok_or_else(|| SynthError::Discrete(format!("raw layout needs race {r}")))
        })
        .collect::<Result<_, _>>()?;
    let mut grid = vec![[None::<&Cell>; 3]; counts.num_counties()];
    for cell in counts.cells() {
        if let Some(slot) = positions.iter().position(|&p| p == cell.race) {
            grid[cell.county][slot] = Some(cell);
        }
    }
    let mut rng = Pcg32::seed_from_u64(seed);
    grid.iter()
        .enumerate()
        .map(|(d, cells)| {
            let county_id = counts.counties()[d].clone();
            let [Some(w), Some(b), Some(h)] = *cells else {
                return Err(SynthError::Discrete(format!(
                    "county {county_id} lacks a race"
                )));
            };
            let mut layout = |pick: fn(&Cell) -> u64| {
                let (wc, bc, hc) = (pick(w) as f64, pick(b) as f64, pick(h) as f64);
                let total = wc + bc + hc;
                let frac_hispanic = if total > 0.0 { hc / total } else { 0.0 };
                let known: f64 = rng.random_range(0.85..=0.97);
                let scale = known / (1.0 - frac_hispanic).max(f64::MIN_POSITIVE);
                RawCounts {
                    total,
                    white: wc * scale,
                    black: bc * scale,
                    frac_hispanic,
                    frac_race_known: known,
                }
            };
            let tests = layout(|c| c.tests);
            let cases = layout(|c| c.cases);
            Ok(RawCountyRecord {
                county_id,
                cases,
                tests,
                census: Census {
                    nh_white: Some(w.population),
                    nh_black: Some(b.population),
                    hispanic: Some(h.population),
                },
            })
        })
        .collect()
}

/// Settings of the default parameter-recovery scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryDesign {
    pub counties: usize,
    pub min_population: f64,
    pub max_population: f64,
    /// White thresholds are spread uniformly on the logit scale over this range.
    pub white_threshold_range: (f64, f64),
    /// Minority thresholds relative to white at the median white threshold,
    /// in `Race::ALL` order after white.
    pub threshold_ratios: [f64; 2],
    /// Prevalence per race, `Race::ALL` order.
    pub prevalence: [f64; 3],
    /// Separation per race, `Race::ALL` order.
    pub separation: [f64; 3],
    /// Standard deviation of county prevalence effects, logit scale.
    pub county_prevalence_sd: f64,
    /// Per-race multipliers on the drawn populations, `Race::ALL` order.
    pub population_scale: [f64; 3],
}

impl Default for RecoveryDesign {
    fn default() -> Self {
        Self {
            counties: 50,
            min_population: 1e3,
            max_population: 1e5,
            white_threshold_range: (0.02, 0.05),
            threshold_ratios: [1.5, 3.0],
            prevalence: [0.03, 0.05, 0.08],
            separation: [1.0, 0.9, 0.8],
            county_prevalence_sd: 1.0,
            population_scale: [1.0; 3],
        }
    }
}

/// A recovery scenario together with the latent parameters that generated it.
#[derive(Debug, Clone)]
pub struct RecoveryScenario {
    pub scenario: TrueScenario,
    pub latent: LatentParams,
}

/// Builds the recovery scenario from `design`, using `seed` both for the
/// scenario layout and as the simulation seed.
pub fn recovery_scenario(
    design: &RecoveryDesign,
    seed: u64,
) -> Result<RecoveryScenario, SynthError> {
    let mut rng = Pcg32::seed_from_u64(seed.wrapping_add(0x5eed));
    let d = design.counties;
    let centered = |mut xs: Vec<f64>| {
        let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        xs.iter_mut().for_each(|x| *x -= mean);
        xs
    };
    let normal = rand_distr::StandardNormal;
    let phi_county = centered(
        (0..d)
            .map(|_| design.county_prevalence_sd * Distribution::<f64>::sample(&normal, &mut rng))
            .collect(),
    );
    let (lo, hi) = (
        logit(design.white_threshold_range.0),
        logit(design.white_threshold_range.1),
    );
    let zeta_county = centered((0..d).map(|_| rng.random_range(lo..hi)).collect());
    let white_mid = 0.5 * (lo + hi);
    let z_mid = crate::special::logistic(white_mid);
    let mut zeta_race = vec![white_mid];
    for ratio in design.threshold_ratios {
        zeta_race.push(logit(ratio * z_mid));
    }
    let latent = LatentParams {
        phi_race: design.prevalence.iter().map(|&p| logit(p)).collect(),
        delta_race: design.separation.iter().map(|&s| s.ln()).collect(),
        zeta_race,
        phi_county,
        zeta_county,
        delta_county: None,
        sigma_phi: design.county_prevalence_sd,
        sigma_zeta: (hi - lo) / 12f64.sqrt(),
        sigma_delta: None,
    };
    let (ln_lo, ln_hi) = (design.min_population.ln(), design.max_population.ln());
    let populations: Vec<Vec<u64>> = (0..d)
        .map(|_| {
            design
                .population_scale
                .iter()
                .map(|scale| {
                    (scale * rng.random_range(ln_lo..ln_hi).exp())
                        .round()
                        .max(1.0) as u64
                })
                .collect()
        })
        .collect();
    let counties = (0..d).map(|i| format!("county_{i:03}")).collect();
    let scenario =
        TrueScenario::from_latent(&latent, Race::ALL.to_vec(), counties, &populations, seed)?;
    Ok(RecoveryScenario { scenario, latent })
}

/// The default 50-county, 3-race recovery scenario.
pub fn default_recovery_scenario(seed: u64) -> Result<RecoveryScenario, SynthError> {
    recovery_scenario(&RecoveryDesign::default(), seed)
}

/// One race in a discrete scenario: risk groups with their population shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRace {
    pub label: String,
    /// `(mass fraction, risk)` pairs.
    pub groups: Vec<(f64, f64)>,
    pub threshold: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScenario {
    pub name: String,
    pub races: Vec<DiscreteRace>,
}

impl DiscreteScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        for race in &self.races {
            let total: f64 = race.groups.iter().map(|g| g.0).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(SynthError::Discrete(format!(
                    "{}: mass fractions sum to {total}",
                    race.label
                )));
            }
            if race
                .groups
                .iter()
                .any(|&(m, r)| !(0.0..=1.0).contains(&m) || !(0.0..=1.0).contains(&r))
            {
                return Err(SynthError::Discrete(format!(
                    "{}: fractions and risks must be in [0, 1]",
                    race.label
                )));
            }
            if !(race.population > 0.0) {
                return Err(SynthError::Discrete(format!(
                    "{}: population must be positive",
                    race.label
                )));
            }
        }
        Ok(())
    }
}

/// Two equally sized groups per race, low and high risk, with a shared 0.10 threshold.
pub fn paper_hypothetical() -> DiscreteScenario {
    DiscreteScenario {
        name: "equal thresholds, different risk distributions".into(),
        races: vec![
            DiscreteRace {
                label: "white".into(),
                groups: vec![(0.5, 0.05), (0.5, 0.50)],
                threshold: 0.10,
                population: 1000.0,
            },
            DiscreteRace {
                label: "black".into(),
                groups: vec![(0.5, 0.05), (0.5, 0.75)],
                threshold: 0.10,
                population: 1000.0,
            },
        ],
    }
}

/// Black patients face a stricter threshold yet show lower positivity, so the
/// positivity comparison points the wrong way.
pub fn reverse_direction_demo() -> DiscreteScenario {
    DiscreteScenario {
        name: "higher threshold, lower positivity".into(),
        races: vec![
            DiscreteRace {
                label: "white".into(),
                groups: vec![(0.5, 0.05), (0.5, 0.60)],
                threshold: 0.10,
                population: 1000.0,
            },
            DiscreteRace {
                label: "black".into(),
                groups: vec![(0.5, 0.05), (0.5, 0.30)],
                threshold: 0.20,
                population: 1000.0,
            },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRace {
    pub label: String,
    pub threshold: f64,
    /// Whether each risk group lies strictly above the threshold.
    pub tested_groups: Vec<bool>,
    pub tested_fraction: f64,
    pub tested_count: f64,
    /// `None` when nobody is tested.
    pub positivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub scenario: String,
    pub races: Vec<DemoRace>,
    pub thresholds_equal: bool,
    pub statement: String,
}

impl DemoReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("Scenario: {}\n", self.scenario);
        for r in &self.races {
            let positivity = r
                .positivity
                .map_or_else(|| "n/a".to_string(), |p| format!("{:.1}%", 100.0 * p));
            let _ = writeln!(
                out,
                "  {:<10} threshold {:.2}  tested {:.1}% of population  positivity {}",
                r.label,
                r.threshold,
                100.0 * r.tested_fraction,
                positivity
            );
        }
        out.push_str(&self.statement);
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("demo report serializes")
    }
}

/// Works out exactly who is tested and the resulting positivity per race.
/// A group is tested when its risk is strictly above the race's threshold.
pub fn inframarginality_demo(scenario: &DiscreteScenario) -> Result<DemoReport, SynthError> {
    scenario.validate()?;
    let races: Vec<DemoRace> = scenario
        .races
        .iter()
        .map(|race| {
            let tested_groups: Vec<bool> = race
                .groups
                .iter()
                .map(|&(_, risk)| risk > race.threshold)
                .collect();
            let (mass, positive) = race
                .groups
                .iter()
                .zip(&tested_groups)
                .filter(|(_, &tested)| tested)
                .fold((0.0, 0.0), |(m, p), (&(mass, risk), _)| {
                    (m + mass, p + mass * risk)
                });
            DemoRace {
                label: race.label.clone(),
                threshold: race.threshold,
                tested_groups,
                tested_fraction: mass,
                tested_count: mass * race.population,
                positivity: (mass > 0.0).then(|| positive / mass),
            }
        })
        .collect();
    let thresholds_equal = races.windows(2).all(|w| w[0].threshold == w[1].threshold);
    let statement = describe(&races, thresholds_equal);
    Ok(DemoReport {
        scenario: scenario.name.clone(),
        races,
        thresholds_equal,
        statement,
    })
}

fn describe(races: &[DemoRace], thresholds_equal: bool) -> String {
    let pct =
        |p: Option<f64>| p.map_or_else(|| "n/a".to_string(), |p| format!("{:.1}%", 100.0 * p));
    let summary = races
        .iter()
        .map(|r| format!("{} {}", r.label, pct(r.positivity)))
        .collect::<Vec<_>>()
        .join(" vs ");
    if thresholds_equal {
        let same_positivity = races.windows(2).all(|w| w[0].positivity == w[1].positivity);
        if same_positivity {
            format!("Thresholds are equal and so is positivity ({summary}).")
        } else {
            format!(
                "Thresholds are equal ({:.2} for every race), yet positivity differs ({summary}): \
                 the gap comes from the risk distributions, not from the testing standard.",
                races.first().map_or(0.0, |r| r.threshold)
            )
        }
    } else {
        let strictest = races
            .iter()
            .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
            .expect("at least two races");
        let highest_positivity = races
            .iter()
            .filter(|r| r.positivity.is_some())
            .max_by(|a, b| a.positivity.partial_cmp(&b.positivity).expect("finite"));
        let misleading = highest_positivity.is_some_and(|h| h.label != strictest.label);
        let thresholds = races
            .iter()
            .map(|r| format!("{} {:.2}", r.label, r.threshold))
            .collect::<Vec<_>>()
            .join(", ");
        if misleading {
            format!(
                "Thresholds differ ({thresholds}); {} patients face the highest threshold, yet positivity \
                 ({summary}) is not highest for them, so comparing positivity points the wrong way.",
                strictest.label
            )
        } else {
            format!(
                "Thresholds differ ({thresholds}); {} patients face the highest threshold and also show the \
                 highest positivity ({summary}).",
                strictest.label
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_counts, ProcessingMethod};
    use approx::assert_abs_diff_eq;

    #[test]
    fn raw_layout_round_trips_under_original_method() {
        let design = RecoveryDesign {
            counties: 8,
            population_scale: [5.0, 1.0, 1.0],
            ..RecoveryDesign::default()
        };
        let rec = recovery_scenario(&design, 4).unwrap();
        let counts = simulate(&rec.scenario).unwrap();
        let raw = to_raw_records(&counts, 9).unwrap();
        assert_eq!(raw.len(), 8);
        let back = build_counts(&raw, ProcessingMethod::Original).unwrap();
        assert_eq!(back.records(), counts.records());
        for r in &raw {
            assert!(r.tests.frac_race_known >= 0.85 && r.tests.frac_race_known <= 0.97);
            assert_abs_diff_eq!(
                r.tests.total * r.tests.frac_hispanic,
                back_hispanic(&back, &r.county_id),
                epsilon = 1e-9
            );
        }
        let raw_counts = build_counts(&raw, ProcessingMethod::RawCounts).unwrap();
        assert_ne!(raw_counts.records(), counts.records());
    }

    fn back_hispanic(counts: &ObservedCounts, county: &str) -> f64 {
        counts
            .records()
            .iter()
            .find(|r| r.county_id == county && r.race == Race::Hispanic)
            .map(|r| r.tests as f64)
            .unwrap()
    }

    fn one_cell(phi: f64, delta: f64, z: f64, n: u64, seed: u64) -> TrueScenario {
        TrueScenario {
            races: vec![Race::White],
            counties: vec!["a".into()],
            cells: vec![TrueCell {
                county: 0,
                race: 0,
                population: n,
                risk: DiscriminantParams::new(phi, delta).unwrap(),
                threshold: Threshold::new(z).unwrap(),
            }],
            seed,
        }
    }

    #[test]
    fn threshold_above_support_gives_no_tests() {
        for seed in 0..20 {
            let data = simulate(&one_cell(0.3, 0.0, 0.5, 100_000, seed)).unwrap();
            assert_eq!((data.cells()[0].tests, data.cells()[0].cases), (0, 0));
        }
    }

    #[test]
    fn everyone_tested_when_threshold_is_tiny() {
        let data = simulate(&one_cell(0.05, 1.0, 1e-12, 1_000_000, 3)).unwrap();
        let c = data.cells()[0];
        assert_abs_diff_eq!(c.tests as f64 / 1e6, 1.0, epsilon = 0.01);
        assert_abs_diff_eq!(c.cases as f64 / c.tests as f64, 0.05, epsilon = 0.01);
    }

    #[test]
    fn simulation_is_seeded() {
        let s = default_recovery_scenario(7).unwrap().scenario;
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(simulate(&s).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn mean_test_rate_converges() {
        let scenario = one_cell(0.1, 1.5, 0.15, 2_000_000, 0);
        let f = scenario.rates().unwrap()[0].0;
        let mean_tests = scenario.cells[0].population as f64 * f;
        assert!(mean_tests >= 1e5);
        let runs = 40;
        let total: u64 = (0..runs)
            .map(|seed| {
                let mut s = scenario.clone();
                s.seed = seed;
                simulate(&s).unwrap().cells()[0].tests
            })
            .sum();
        let empirical = total as f64 / runs as f64;
        assert!((empirical - mean_tests).abs() / mean_tests < 0.01);
    }

    #[test]
    fn scenario_file_round_trip() {
        let s = default_recovery_scenario(11).unwrap().scenario;
        let parsed = TrueScenario::parse(&s.to_text()).unwrap();
        assert_eq!(parsed.seed, s.seed);
        assert_eq!(parsed.cells.len(), s.cells.len());
        for (a, b) in parsed.cells.iter().zip(&s.cells) {
            assert_eq!(a.population, b.population);
            assert_eq!(a.threshold, b.threshold);
            assert_eq!(a.risk, b.risk);
        }
        let bad = "seed = 1\n[cells]\ncounty_id,race,population,phi,delta,threshold\na,white,10,0.5,1.0,1.5\n";
        assert!(matches!(
            TrueScenario::parse(bad),
            Err(SynthError::Parse { line: 4, .. })
        ));
        assert!(TrueScenario::parse("[cells]\n").is_err());
    }

    #[test]
    fn recovery_scenario_matches_design() {
        let rec = default_recovery_scenario(1).unwrap();
        let s = &rec.scenario;
        assert_eq!(s.cells.len(), 150);
        let grid = s.threshold_grid();
        for &z in &grid[0] {
            assert!((0.015..0.06).contains(&z), "white threshold {z}");
        }
        for row in &grid {
            for &z in row {
                assert!((0.015..=0.16).contains(&z), "threshold {z}");
            }
        }
        for c in &s.cells {
            assert!((1_000..=100_000).contains(&c.population));
        }
    }

    #[test]
    fn paper_hypothetical_outcome() {
        let report = inframarginality_demo(&paper_hypothetical()).unwrap();
        assert!(report.thresholds_equal);
        assert_eq!(report.races[0].positivity, Some(0.5));
        assert_eq!(report.races[1].positivity, Some(0.75));
        assert_eq!(report.races[0].tested_groups, vec![false, true]);
        assert!(report.to_text().contains("50.0%"));
        assert!(report.to_json().contains("\"positivity\": 0.75"));
    }

    #[test]
    fn identical_races_have_identical_positivity() {
        let mut s = paper_hypothetical();
        s.races[1].groups = s.races[0].groups.clone();
        let report = inframarginality_demo(&s).unwrap();
        assert_eq!(report.races[0].positivity, report.races[1].positivity);
    }

    #[test]
    fn higher_threshold_on_equal_distributions() {
        let groups = vec![(1.0 / 3.0, 0.05), (1.0 / 3.0, 0.30), (1.0 / 3.0, 0.75)];
        let s = DiscreteScenario {
            name: "equal distributions".into(),
            races: vec![
                DiscreteRace {
                    label: "white".into(),
                    groups: groups.clone(),
                    threshold: 0.10,
                    population: 300.0,
                },
                DiscreteRace {
                    label: "black".into(),
                    groups,
                    threshold: 0.60,
                    population: 300.0,
                },
            ],
        };
        let report = inframarginality_demo(&s).unwrap();
        assert_abs_diff_eq!(report.races[0].positivity.unwrap(), 0.525, epsilon = 1e-15);
        assert_abs_diff_eq!(report.races[1].positivity.unwrap(), 0.75, epsilon = 1e-15);
        assert_eq!(report.races[1].tested_groups, vec![false, false, true]);
    }

    #[test]
    fn reverse_direction_case() {
        let report = inframarginality_demo(&reverse_direction_demo()).unwrap();
        let (white, black) = (&report.races[0], &report.races[1]);
        assert!(black.threshold > white.threshold);
        assert!(black.positivity.unwrap() < white.positivity.unwrap());
        assert!(report.statement.contains("wrong way"));
    }

    #[test]
    fn demo_is_invariant_to_population_scale() {
        let base = inframarginality_demo(&paper_hypothetical()).unwrap();
        let mut scaled = paper_hypothetical();
        scaled.races.iter_mut().for_each(|r| r.population *= 37.0);
        let scaled = inframarginality_demo(&scaled).unwrap();
        for (a, b) in base.races.iter().zip(&scaled.races) {
            assert_eq!(a.positivity, b.positivity);
            assert_eq!(a.tested_fraction, b.tested_fraction);
        }
    }

    #[test]
    fn invalid_discrete_scenario() {
        let mut s = paper_hypothetical();
        s.races[0].groups[0].0 = 0.7;
        assert!(inframarginality_demo(&s).is_err());
    }
}
