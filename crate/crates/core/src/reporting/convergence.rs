//! Sample-efficiency harness: explain many instances at a ladder of sample
//! budgets and tabulate how the part scores settle.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::attribution::{explain_instance, ExplainConfig, Instance, Method};
use crate::detector::DetectorSpec;
use crate::error::{Error, Result};
use crate::masking::MaskingKind;
use crate::segmentation::AbstractionLevel;

/// What the `std` column measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// Spread across instances, averaged over seeds.
    #[default]
    Instances,
    /// Spread across seeds, averaged over instances.
    Seeds,
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instances" => Ok(Band::Instances),
            "seeds" => Ok(Band::Seeds),
            other => Err(Error::Config(format!("unknown band {other:?} (expected instances|seeds)"))),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Instances => "instances",
            Band::Seeds => "seeds",
        })
    }
}

/// `8, 16, ..., 4096`.
pub fn default_ladder() -> Vec<usize> {
    (3..=12).map(|k| 1usize << k).collect()
}

pub fn validate_ladder(ladder: &[usize]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Config("empty sample ladder".into()));
    }
    if let Some(n) = ladder.iter().find(|n| !n.is_power_of_two()) {
        return Err(Error::Config(format!("ladder entry {n} is not a power of two")));
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("ladder must be strictly increasing".into()));
    }
    Ok(())
}

/// Parses `"8,16,32"`.
pub fn parse_ladder(s: &str) -> Result<Vec<usize>> {
    let ladder = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad ladder entry {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_ladder(&ladder)?;
    Ok(ladder)
}

/// The `n` instances with the largest ground-truth box, ties by name.
pub fn select_biggest<T>(mut items: Vec<T>, n: usize, key: impl Fn(&T) -> &Instance) -> Vec<T> {
    items.sort_by(|a, b| {
        let (a, b) = (key(a), key(b));
        b.gt.area().total_cmp(&a.gt.area()).then_with(|| a.name.cmp(&b.name))
    });
    items.truncate(n);
    items
}

/// An instance and the detector that scores it.
#[derive(Debug, Clone)]
pub struct Subject {
    pub instance: Instance,
    pub detector: DetectorSpec,
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub methods: Vec<Method>,
    pub maskings: Vec<MaskingKind>,
    pub levels: Vec<AbstractionLevel>,
    pub ladder: Vec<usize>,
    pub seeds: Vec<u64>,
    pub band: Band,
    /// Estimator settings other than method, masking, level, budget and seed.
    pub base: ExplainConfig,
    /// Instances explained concurrently.
    pub workers: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::KernelShap, Method::BetaSampling],
            maskings: vec![MaskingKind::Inpaint],
            levels: vec![AbstractionLevel::new(1).expect("level 1")],
            ladder: default_ladder(),
            seeds: vec![0],
            band: Band::Instances,
            base: ExplainConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub method: Method,
    pub masking: MaskingKind,
    pub level: u8,
    pub n_samples: usize,
    pub part_id: u8,
    pub part_name: String,
    pub mean_score: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_csv(&mut out)?;
        Ok(out)
    }

    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let rows = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<Vec<ConvergenceRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn rows_for(&self, method: Method, n_samples: usize) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.n_samples == n_samples)
    }
}

/// A `(method, masking, level, budget)` cell that produced no rows because
/// some solve was underdetermined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub method: Method,
    pub masking: MaskingKind,
    pub level: u8,
    pub n_samples: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    pub table: ConvergenceTable,
    pub skipped: Vec<SkippedCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    method: &'static str,
    masking: &'static str,
    level: u8,
    n: usize,
}

type PartScores = BTreeMap<(u8, String), f64>;

/// Scores of one instance for every cell and seed, or the error that made a
/// cell unsolvable.
type InstanceOutcome = BTreeMap<CellKey, std::result::Result<Vec<PartScores>, String>>;

struct Cell {
    method: Method,
    masking: MaskingKind,
    level: AbstractionLevel,
    n: usize,
}

impl Cell {
    fn key(&self) -> CellKey {
        CellKey {
            method: self.method.as_str(),
            masking: self.masking.as_str(),
            level: self.level.get(),
            n: self.n,
        }
    }
}

fn explain_subject(subject: &Subject, cells: &[Cell], config: &ConvergenceConfig) -> Result<InstanceOutcome> {
    let mut out = InstanceOutcome::new();
    for cell in cells {
        let mut per_seed = Vec::with_capacity(config.seeds.len());
        let mut failure = None;
        for &seed in &config.seeds {
            let explain_config = ExplainConfig {
                method: cell.method,
                masking: cell.masking,
                level: cell.level,
                n_samples: cell.n,
                seed,
                workers: 1,
                ..config.base.clone()
            };
            match explain_instance(&subject.instance, &subject.detector, &explain_config) {
                Ok(e) => per_seed.push(
                    e.result
                        .parts
                        .into_iter()
                        .zip(e.result.scores)
                        .map(|(p, s)| ((p.id, p.name), s))
                        .collect(),
                ),
                Err(err @ (Error::Underdetermined { .. } | Error::BudgetTooSmall(_))) => {
                    failure = Some(format!("{}: {err}", subject.instance.name));
                    break;
                }
                Err(err) => return Err(err),
            }
        }
        out.insert(cell.key(), failure.map_or(Ok(per_seed), Err));
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation; zero for fewer than two values.
fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Explains every subject with every method, masking, level, budget and
/// seed. Rows are sorted by (method, masking, level, budget, part id).
///
/// `mean_score` averages a part over all (instance, seed) pairs where it was
/// active. With [`Band::Instances`] the `std` column is the spread across
/// instances for one seed, averaged over seeds; with [`Band::Seeds`] it is
/// the spread across seeds for one instance, averaged over instances.
pub fn run_convergence(subjects: &[Subject], config: &ConvergenceConfig) -> Result<ConvergenceRun> {
    validate_ladder(&config.ladder)?;
    if subjects.is_empty() || config.seeds.is_empty() || config.methods.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &masking in &config.maskings {
            for &level in &config.levels {
                for &n in &config.ladder {
                    cells.push(Cell { method, masking, level, n });
                }
            }
        }
    }

    let workers = config.workers.clamp(1, subjects.len());
    let outcomes: Vec<InstanceOutcome> = if workers == 1 {
        subjects
            .iter()
            .map(|s| explain_subject(s, &cells, config))
            .collect::<Result<_>>()?
    } else {
        let chunks: Vec<Result<Vec<(usize, InstanceOutcome)>>> = thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let cells = &cells;
                    scope.spawn(move || {
                        (w..subjects.len())
                            .step_by(workers)
                            .map(|i| Ok((i, explain_subject(&subjects[i], cells, config)?)))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("convergence worker panicked"))
                .collect()
        });
        let mut indexed = Vec::with_capacity(subjects.len());
        for chunk in chunks {
            indexed.extend(chunk?);
        }
        indexed.sort_by_key(|(i, _)| *i);
        indexed.into_iter().map(|(_, o)| o).collect()
    };

    let mut table = ConvergenceTable::default();
    let mut skipped = Vec::new();
    for cell in &cells {
        let key = cell.key();
        let results: std::result::Result<Vec<&Vec<PartScores>>, &String> =
            outcomes.iter().map(|o| o[&key].as_ref()).collect();
        let per_instance = match results {
            Ok(r) => r,
            Err(reason) => {
                skipped.push(SkippedCell {
                    method: cell.method,
                    masking: cell.masking,
                    level: cell.level.get(),
                    n_samples: cell.n,
                    reason: reason.clone(),
                });
                continue;
            }
        };
        let mut part_keys: Vec<(u8, String)> = per_instance
            .iter()
            .flat_map(|seeds| seeds.iter().flat_map(|s| s.keys().cloned()))
            .collect();
        part_keys.sort();
        part_keys.dedup();
        for part in part_keys {
            let all: Vec<f64> = per_instance
                .iter()
                .flat_map(|seeds| seeds.iter().filter_map(|s| s.get(&part).copied()))
                .collect();
            let spreads: Vec<f64> = match config.band {
                Band::Instances => (0..config.seeds.len())
                    .map(|k| {
                        let v: Vec<f64> = per_instance.iter().filter_map(|s| s[k].get(&part).copied()).collect();
                        std(&v)
                    })
                    .collect(),
                Band::Seeds => per_instance
                    .iter()
                    .filter_map(|seeds| {
                        let v: Vec<f64> = seeds.iter().filter_map(|s| s.get(&part).copied()).collect();
                        (!v.is_empty()).then(|| std(&v))
                    })
                    .collect(),
            };
            table.rows.push(ConvergenceRow {
                method: cell.method,
                masking: cell.masking,
                level: cell.level.get(),
                n_samples: cell.n,
                part_id: part.0,
                part_name: part.1,
                mean_score: mean(&all),
                std: mean(&spreads),
            });
        }
    }
    table.rows.sort_by(|a, b| {
        (a.method.as_str(), a.masking.as_str(), a.level, a.n_samples, a.part_id).cmp(&(
            b.method.as_str(),
            b.masking.as_str(),
            b.level,
            b.n_samples,
            b.part_id,
        ))
    });
    Ok(ConvergenceRun { table, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub method: Method,
    pub masking: MaskingKind,
    pub level: u8,
    pub n_samples: usize,
    /// Mean over parts of the `std` column.
    pub mean_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub band: Band,
    pub bands: Vec<BandSummary>,
    /// Beta bands never grow with the budget, per masking and level.
    pub beta_monotone: bool,
    pub skipped: Vec<SkippedCell>,
}

impl ConvergenceSummary {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }
}

type BandKey<'a> = (&'a str, &'a str, u8, usize);

/// Per-budget band averages computed from a table alone.
pub fn summarize(table: &ConvergenceTable, band: Band, skipped: Vec<SkippedCell>) -> ConvergenceSummary {
    let mut groups: BTreeMap<BandKey, (Method, MaskingKind, Vec<f64>)> = BTreeMap::new();
    for r in &table.rows {
        groups
            .entry((r.method.as_str(), r.masking.as_str(), r.level, r.n_samples))
            .or_insert_with(|| (r.method, r.masking, Vec::new()))
            .2
            .push(r.std);
    }
    let bands: Vec<BandSummary> = groups
        .into_iter()
        .map(|((_, _, level, n), (method, masking, stds))| BandSummary {
            method,
            masking,
            level,
            n_samples: n,
            mean_band: mean(&stds),
        })
        .collect();
    let beta: Vec<&BandSummary> = bands.iter().filter(|b| b.method == Method::BetaSampling).collect();
    let beta_monotone = beta.windows(2).all(|w| {
        w[0].masking != w[1].masking || w[0].level != w[1].level || w[1].mean_band <= w[0].mean_band
    });
    ConvergenceSummary {
        band,
        bands,
        beta_monotone,
        skipped,
    }
}
