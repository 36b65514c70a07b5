//! Posterior summaries: test-weighted thresholds, minority-to-white ratios,
//! positivity tables, posterior predictive errors and risk-distribution curves.
//!
//! Every per-draw quantity is computed draw by draw and summarized afterwards,
//! so a ratio's posterior mean is the mean of per-draw ratios.

use std::fs;
use std::path::Path;

use hmc::{ChainDraws, PosteriorDraws};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ObservedCounts, Race};
use crate::model::{CellPrediction, Model, ModelError};
use crate::riskdist::DiscriminantParams;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("total observed tests across counties is zero; weighted thresholds are undefined")]
    ZeroWeight,
    #[error("no posterior draws to summarize")]
    EmptyDraws,
    #[error("white is not among the races, so ratios to white are undefined")]
    NoWhite,
    #[error("white weighted threshold is {0} in a draw; ratios need it positive")]
    NonPositiveWhite(f64),
    #[error("threshold grid has {got} counties, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("density grid needs at least 3 points, got {0}")]
    Grid(usize),
    #[error("draws file: {0}")]
    DrawsFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Posterior mean with a central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    /// Mean and the 2.5% and 97.5% quantiles (linear interpolation between
    /// order statistics).
    pub fn from_draws(values: &[f64]) -> Result<Self, ReportError> {
        if values.is_empty() {
            return Err(ReportError::EmptyDraws);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: values[0]
                + values.iter().map(|v| v - values[0]).sum::<f64>() / values.len() as f64,
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        })
    }
}

/// Quantile of already sorted values, interpolating between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Thresholds of every draw, indexed `[draw][race][county]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDraws {
    pub races: Vec<Race>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl ThresholdDraws {
    pub fn from_posterior(model: &Model, draws: &PosteriorDraws) -> Result<Self, ReportError> {
        let values = draws
            .iter()
            .map(|theta| model.thresholds(theta))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            races: model.data().races().to_vec(),
            values,
        })
    }

    /// Per-county posterior summaries, indexed `[race][county]`.
    pub fn county_summaries(&self) -> Result<Vec<Vec<Summary>>, ReportError> {
        let first = self.values.first().ok_or(ReportError::EmptyDraws)?;
        (0..first.len())
            .map(|r| {
                (0..first[r].len())
                    .map(|d| {
                        let column: Vec<f64> = self.values.iter().map(|draw| draw[r][d]).collect();
                        Summary::from_draws(&column)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Weighted mean of `values` with weights `weights`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64, ReportError> {
    if values.len() != weights.len() {
        return Err(ReportError::Shape {
            expected: weights.len(),
            got: values.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(ReportError::ZeroWeight);
    }
    Ok(values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * (w / total))
        .sum())
}

/// County weights: observed tests summed over races.
pub fn county_weights(data: &ObservedCounts) -> Vec<f64> {
    data.county_test_totals()
        .into_iter()
        .map(|t| t as f64)
        .collect()
}

/// Test-weighted mean threshold per draw, indexed `[race][draw]`.
pub fn weighted_threshold_draws(
    thresholds: &ThresholdDraws,
    weights: &[f64],
) -> Result<Vec<Vec<f64>>, ReportError> {
    if thresholds.values.is_empty() {
        return Err(ReportError::EmptyDraws);
    }
    let mut out = vec![Vec::with_capacity(thresholds.values.len()); thresholds.races.len()];
    for draw in &thresholds.values {
        for (r, per_county) in draw.iter().enumerate() {
            out[r].push(weighted_mean(per_county, weights)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceSummary {
    pub race: Race,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl RaceSummary {
    pub fn new(race: Race, s: Summary) -> Self {
        Self {
            race,
            mean: s.mean,
            lower: s.lower,
            upper: s.upper,
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.mean,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

pub fn weighted_thresholds(
    thresholds: &ThresholdDraws,
    data: &ObservedCounts,
) -> Result<Vec<RaceSummary>, ReportError> {
    let per_draw = weighted_threshold_draws(thresholds, &county_weights(data))?;
    thresholds
        .races
        .iter()
        .zip(&per_draw)
        .map(|(&race, values)| Ok(RaceSummary::new(race, Summary::from_draws(values)?)))
        .collect()
}

/// Ratio of each non-white race's weighted threshold to white's, per draw.
pub fn ratio_draws(
    races: &[Race],
    weighted: &[Vec<f64>],
) -> Result<Vec<(Race, Vec<f64>)>, ReportError> {
    let white = races
        .iter()
        .position(|&r| r == Race::White)
        .ok_or(ReportError::NoWhite)?;
    if let Some(&bad) = weighted[white].iter().find(|&&w| !(w > 0.0)) {
        return Err(ReportError::NonPositiveWhite(bad));
    }
    Ok(races
        .iter()
        .enumerate()
        .filter(|&(r, _)| r != white)
        .map(|(r, &race)| {
            let ratios = weighted[r]
                .iter()
                .zip(&weighted[white])
                .map(|(m, w)| m / w)
                .collect();
            (race, ratios)
        })
        .collect())
}

pub fn threshold_ratios(
    thresholds: &ThresholdDraws,
    data: &ObservedCounts,
) -> Result<Vec<RaceSummary>, ReportError> {
    let per_draw = weighted_threshold_draws(thresholds, &county_weights(data))?;
    ratio_draws(&thresholds.races, &per_draw)?
        .into_iter()
        .map(|(race, values)| Ok(RaceSummary::new(race, Summary::from_draws(&values)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityRow {
    pub county_id: String,
    pub race: Race,
    pub tests: u64,
    pub cases: u64,
    /// `None` when no tests were reported.
    pub positivity: Option<f64>,
}

pub fn positivity_table(data: &ObservedCounts) -> Vec<PositivityRow> {
    data.cells()
        .iter()
        .map(|c| PositivityRow {
            county_id: data.counties()[c.county].clone(),
            race: data.races()[c.race],
            tests: c.tests,
            cases: c.cases,
            positivity: (c.tests > 0).then(|| c.cases as f64 / c.tests as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub county_id: String,
    pub race: Race,
    pub population: u64,
    pub tests: u64,
    pub cases: u64,
    pub observed_test_rate: f64,
    pub predicted_test_rate: f64,
    pub test_rate_error: f64,
    pub observed_positivity: Option<f64>,
    pub predicted_positivity: f64,
    /// `None` for cells without tests.
    pub positivity_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcTable {
    pub rows: Vec<PpcRow>,
    pub mean_test_rate_error: f64,
    /// Over cells with at least one test.
    pub mean_positivity_error: f64,
}

/// Observed minus predicted test rate and positivity per cell.
pub fn ppc_from_predictions(
    data: &ObservedCounts,
    predictions: &[CellPrediction],
) -> Result<PpcTable, ReportError> {
    if predictions.len() != data.cells().len() {
        return Err(ReportError::Shape {
            expected: data.cells().len(),
            got: predictions.len(),
        });
    }
    let rows: Vec<PpcRow> = data
        .cells()
        .iter()
        .zip(predictions)
        .map(|(c, p)| {
            let observed_test_rate = c.tests as f64 / c.population as f64;
            let observed_positivity = (c.tests > 0).then(|| c.cases as f64 / c.tests as f64);
            PpcRow {
                county_id: data.counties()[c.county].clone(),
                race: data.races()[c.race],
                population: c.population,
                tests: c.tests,
                cases: c.cases,
                observed_test_rate,
                predicted_test_rate: p.f,
                test_rate_error: observed_test_rate - p.f,
                observed_positivity,
                predicted_positivity: p.g,
                positivity_error: observed_positivity.map(|o| o - p.g),
            }
        })
        .collect();
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    Ok(PpcTable {
        mean_test_rate_error: mean(rows.iter().map(|r| r.test_rate_error).collect()),
        mean_positivity_error: mean(rows.iter().filter_map(|r| r.positivity_error).collect()),
        rows,
    })
}

pub fn ppc(model: &Model, draws: &PosteriorDraws) -> Result<PpcTable, ReportError> {
    ppc_from_predictions(model.data(), &model.predict(draws)?)
}

/// Posterior-mean, test-weighted risk density of one race on a grid over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub race: Race,
    pub risk: Vec<f64>,
    pub density: Vec<f64>,
    /// Posterior mean of the test-weighted threshold over the draws used.
    pub threshold: f64,
}

impl DensityCurve {
    /// Trapezoid-rule integral of the curve.
    pub fn integral(&self) -> f64 {
        self.risk
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Trapezoid-rule mass at risk above `p`.
    pub fn mass_above(&self, p: f64) -> f64 {
        self.risk
            .windows(2)
            .zip(self.density.windows(2))
            .filter(|(x, _)| x[0] >= p)
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

/// Evenly spaced grid of `points` risks from 0 to 1 inclusive.
pub fn risk_grid(points: usize) -> Result<Vec<f64>, ReportError> {
    if points < 3 {
        return Err(ReportError::Grid(points));
    }
    Ok((0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect())
}

/// Density at risk `p`, taking the limit 0 at the endpoints.
fn density_or_zero(dist: &DiscriminantParams, p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        dist.density(p).unwrap_or(0.0)
    }
}

/// Aggregated density curves from parameter draws given as iterator items.
///
/// Each draw contributes the test-weighted average over counties of the
/// county's risk density; the curve is the mean over draws.
pub fn risk_distribution_curves_from<'a, I>(
    model: &Model,
    draws: I,
    grid: &[f64],
) -> Result<Vec<DensityCurve>, ReportError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let data = model.data();
    let weights = county_weights(data);
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(ReportError::ZeroWeight);
    }
    let races = data.num_races();
    let mut sums = vec![vec![0.0; grid.len()]; races];
    let mut threshold_sums = vec![0.0; races];
    let mut count = 0usize;
    for theta in draws {
        let latent = model.layout().constrain(theta)?;
        for (r, sum) in sums.iter_mut().enumerate() {
            let mut z = 0.0;
            for (d, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let dist = latent.risk_distribution(r, d).map_err(ModelError::from)?;
                let share = w / total;
                for (s, &p) in sum.iter_mut().zip(grid) {
                    *s += share * density_or_zero(&dist, p);
                }
                z += share * latent.threshold(r, d);
            }
            threshold_sums[r] += z;
        }
        count += 1;
    }
    if count == 0 {
        return Err(ReportError::EmptyDraws);
    }
    let k = count as f64;
    Ok(data
        .races()
        .iter()
        .enumerate()
        .map(|(r, &race)| DensityCurve {
            race,
            risk: grid.to_vec(),
            density: sums[r].iter().map(|s| s / k).collect(),
            threshold: threshold_sums[r] / k,
        })
        .collect())
}

/// Aggregated density curves over at most `max_draws` evenly thinned draws.
pub fn risk_distribution_curves(
    model: &Model,
    draws: &PosteriorDraws,
    grid: &[f64],
    max_draws: usize,
) -> Result<Vec<DensityCurve>, ReportError> {
    let total = draws.total_draws();
    let stride = total.div_ceil(max_draws.max(1)).max(1);
    risk_distribution_curves_from(model, draws.iter().step_by(stride), grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyThreshold {
    pub county_id: String,
    pub race: Race,
    pub tests: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Headline outputs of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub weighted_thresholds: Vec<RaceSummary>,
    /// Empty when white is absent from the data.
    pub ratios: Vec<RaceSummary>,
    pub county_thresholds: Vec<CountyThreshold>,
    pub positivity: Vec<PositivityRow>,
    pub ppc: PpcTable,
}

impl DisparityReport {
    pub fn build(model: &Model, draws: &PosteriorDraws) -> Result<Self, ReportError> {
        let data = model.data();
        let thresholds = ThresholdDraws::from_posterior(model, draws)?;
        let county = thresholds.county_summaries()?;
        let county_thresholds = data
            .cells()
            .iter()
            .map(|c| CountyThreshold {
                county_id: data.counties()[c.county].clone(),
                race: data.races()[c.race],
                tests: c.tests,
                mean: county[c.race][c.county].mean,
                lower: county[c.race][c.county].lower,
                upper: county[c.race][c.county].upper,
            })
            .collect();
        let ratios = match threshold_ratios(&thresholds, data) {
            Err(ReportError::NoWhite) => Vec::new(),
            other => other?,
        };
        Ok(Self {
            weighted_thresholds: weighted_thresholds(&thresholds, data)?,
            ratios,
            county_thresholds,
            positivity: positivity_table(data),
            ppc: ppc(model, draws)?,
        })
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json` and the CSV tables into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, self.to_json()? + "\n").map_err(io_error(&json_path))?;
        write_rows(
            &dir.join("weighted_thresholds.csv"),
            &self.weighted_thresholds,
        )?;
        write_rows(&dir.join("ratios.csv"), &self.ratios)?;
        write_rows(&dir.join("county_thresholds.csv"), &self.county_thresholds)?;
        write_rows(&dir.join("positivity.csv"), &self.positivity)?;
        write_rows(&dir.join("ppc.csv"), &self.ppc.rows)?;
        Ok(())
    }
}

/// Long-format rows of density curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub race: Race,
    pub risk: f64,
    pub density: f64,
    pub threshold: f64,
}

pub fn density_rows(curves: &[DensityCurve]) -> Vec<DensityRow> {
    curves
        .iter()
        .flat_map(|c| {
            c.risk
                .iter()
                .zip(&c.density)
                .map(move |(&risk, &density)| DensityRow {
                    race: c.race,
                    risk,
                    density,
                    threshold: c.threshold,
                })
        })
        .collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let file = fs::File::create(path).map_err(io_error(path))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(io_error(path))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(ReportError::from))
        .collect()
}

const DRAW_META: [&str; 5] = ["chain", "iteration", "lp__", "accept_stat__", "divergent__"];

/// Writes sampling-phase draws as CSV: one row per draw, chain and
/// iteration first, then log density, acceptance probability, divergence
/// flag and the unconstrained parameters under `names`.
pub fn write_draws(
    path: &Path,
    names: &[String],
    draws: &PosteriorDraws,
) -> Result<(), ReportError> {
    if names.len() != draws.dim {
        return Err(ReportError::DrawsFormat(format!(
            "{} names for {} parameters",
            names.len(),
            draws.dim
        )));
    }
    let file = fs::File::create(path).map_err(io_error(path))?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(
        DRAW_META
            .iter()
            .copied()
            .chain(names.iter().map(String::as_str)),
    )?;
    for (k, chain) in draws.chains.iter().enumerate() {
        for (i, theta) in chain.draws.iter().enumerate() {
            let mut record = vec![
                k.to_string(),
                i.to_string(),
                chain.log_density[i].to_string(),
                chain.accept_prob[i].to_string(),
                u8::from(chain.divergent[i]).to_string(),
            ];
            record.extend(theta.iter().map(f64::to_string));
            writer.write_record(&record)?;
        }
    }
    writer.flush().map_err(io_error(path))?;
    Ok(())
}

/// Reads a file written by [`write_draws`]. Step sizes and mass matrices are
/// not stored, so they come back as NaN and empty.
pub fn read_draws(path: &Path) -> Result<(Vec<String>, PosteriorDraws), ReportError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < DRAW_META.len() || header.iter().zip(DRAW_META).any(|(h, m)| h != m) {
        return Err(ReportError::DrawsFormat(format!(
            "expected leading columns {}",
            DRAW_META.join(",")
        )));
    }
    let names: Vec<String> = header
        .iter()
        .skip(DRAW_META.len())
        .map(str::to_string)
        .collect();
    let dim = names.len();
    let mut chains: Vec<ChainDraws> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| ReportError::DrawsFormat(format!("row {}: bad {what}", line + 2));
        let field = |i: usize| record.get(i).unwrap_or("");
        let chain: usize = field(0).parse().map_err(|_| bad("chain"))?;
        if chain > chains.len() {
            return Err(bad("chain order"));
        }
        if chain == chains.len() {
            chains.push(ChainDraws {
                draws: Vec::new(),
                log_density: Vec::new(),
                divergent: Vec::new(),
                accept_prob: Vec::new(),
                step_size: f64::NAN,
                inverse_mass: Vec::new(),
                warmup_divergences: 0,
                warmup_draws: Vec::new(),
            });
        }
        let out = &mut chains[chain];
        out.log_density
            .push(field(2).parse().map_err(|_| bad("lp__"))?);
        out.accept_prob
            .push(field(3).parse().map_err(|_| bad("accept_stat__"))?);
        out.divergent.push(field(4) == "1");
        let theta = (0..dim)
            .map(|j| field(DRAW_META.len() + j).parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("parameter value"))?;
        out.draws.push(theta);
    }
    Ok((names, PosteriorDraws::new(dim, chains)))
}
