//! Benchmark harness: runs a task suite under several heuristics and reports
//! nodes explored, search time and SPL (success weighted by normalised
//! inverse path length).

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{draw_feasible_start, DEFAULT_PENALTY, MAX_ATTEMPTS};
use crate::heuristics::{oracle_source, riskmap2_source, state_source, ExpertTableSource, HeuristicError, ZeroSource};
use crate::inference::{load_weights, InferenceError, ModelKind, ModelWeights};
use crate::oracle::OracleError;
use crate::riskmap::{generate_random_map, Cell, MapError, RiskMap};
use crate::rng::{self, Stream};
use crate::safety::DEFAULT_EPSILON;
use crate::search::{asd_astar, HeuristicSource, Manhattan, SearchError, Task};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("SPL of an empty record set")]
    Empty,
    #[error("task {0}: no feasible start/destination pair within the attempt bound")]
    InfeasibleTask(usize),
    #[error("task {task}: `{heuristic}` found length {found}, shorter than the optimum {optimal}")]
    BelowOptimal {
        task: usize,
        heuristic: String,
        found: u32,
        optimal: u32,
    },
    #[error("unknown heuristic `{0}`")]
    UnknownHeuristic(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which heuristic to run, and how to build a fresh source for each task.
#[derive(Debug, Clone)]
pub enum HeuristicSpec {
    Manhattan,
    Zero,
    Oracle,
    /// Expert riskmap2 labels built from the oracle path of each task.
    Expert {
        penalty: u32,
    },
    Riskmap2(Arc<ModelWeights>),
    State(Arc<ModelWeights>),
}

impl HeuristicSpec {
    /// Parses `manhattan`, `zero`, `oracle`, `expert[:P]`, `riskmap2:<weights>`
    /// or `state:<weights>`.
    pub fn parse(spec: &str) -> Result<Self, EvalError> {
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        let weights = |kind: ModelKind| -> Result<Arc<ModelWeights>, EvalError> {
            let path = arg.ok_or_else(|| EvalError::UnknownHeuristic(format!("{spec} (missing weights path)")))?;
            let w = load_weights(path)?;
            if w.kind() != kind {
                return Err(InferenceError::WrongKind {
                    expected: kind.as_str(),
                    found: w.kind().as_str(),
                }
                .into());
            }
            Ok(Arc::new(w))
        };
        Ok(match (head, arg) {
            ("manhattan", None) => HeuristicSpec::Manhattan,
            ("zero", None) => HeuristicSpec::Zero,
            ("oracle", None) => HeuristicSpec::Oracle,
            ("expert", None) => HeuristicSpec::Expert {
                penalty: DEFAULT_PENALTY,
            },
            ("expert", Some(p)) => HeuristicSpec::Expert {
                penalty: p.parse().map_err(|_| EvalError::UnknownHeuristic(spec.into()))?,
            },
            ("riskmap2", _) => HeuristicSpec::Riskmap2(weights(ModelKind::Riskmap2)?),
            ("state", _) => HeuristicSpec::State(weights(ModelKind::State)?),
            _ => return Err(EvalError::UnknownHeuristic(spec.into())),
        })
    }

    pub fn name(&self) -> String {
        match self {
            HeuristicSpec::Manhattan => "manhattan".into(),
            HeuristicSpec::Zero => "zero".into(),
            HeuristicSpec::Oracle => "oracle".into(),
            HeuristicSpec::Expert { penalty } => format!("expert:{penalty}"),
            HeuristicSpec::Riskmap2(_) => "riskmap2".into(),
            HeuristicSpec::State(_) => "state".into(),
        }
    }

    pub fn instantiate(&self) -> Result<Box<dyn HeuristicSource + Send>, EvalError> {
        Ok(match self {
            HeuristicSpec::Manhattan => Box::new(Manhattan),
            HeuristicSpec::Zero => Box::new(ZeroSource),
            HeuristicSpec::Oracle => Box::new(oracle_source()),
            HeuristicSpec::Expert { penalty } => Box::new(ExpertTableSource::new(*penalty)),
            HeuristicSpec::Riskmap2(w) => Box::new(riskmap2_source(w.clone())?),
            HeuristicSpec::State(w) => Box::new(state_source(w.clone())?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub map_size: usize,
    pub maps: usize,
    pub tasks: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl SuiteConfig {
    /// 1000 tasks over 100 maps at the default threshold.
    pub fn new(map_size: usize, seed: u64) -> Self {
        Self {
            map_size,
            maps: 100,
            tasks: 1000,
            seed,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteTask {
    pub id: usize,
    pub map: usize,
    pub start: Cell,
    pub dest: Cell,
    /// Oracle shortest feasible length.
    pub optimal_length: u32,
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub maps: Vec<RiskMap>,
    pub tasks: Vec<SuiteTask>,
    pub epsilon: f64,
}

impl Suite {
    pub fn task(&self, i: usize) -> Task<'_> {
        let t = &self.tasks[i];
        Task::with_epsilon(&self.maps[t.map], t.start, t.dest, self.epsilon)
    }
}

/// Deterministic suite: task `j` lives on map `j mod maps`. Destinations are
/// drawn until one has at least one feasible start, and the start is uniform
/// over those.
pub fn build_suite(config: &SuiteConfig) -> Result<Suite, EvalError> {
    let maps: Vec<RiskMap> = (0..config.maps as u64)
        .into_par_iter()
        .map(|i| {
            generate_random_map(
                config.map_size,
                config.map_size,
                rng::derive_seed(config.seed, Stream::Map, i),
            )
        })
        .collect::<Result<_, _>>()?;
    let tasks = (0..config.tasks)
        .into_par_iter()
        .map(|id| {
            let map_index = id % maps.len().max(1);
            let map = &maps[map_index];
            let mut rng = rng::rng_for(config.seed, Stream::Suite, id as u64);
            let dests: Vec<Cell> = map.cells().filter(|&c| map.risk(c) < 1.0).collect();
            if dests.is_empty() {
                return Err(EvalError::InfeasibleTask(id));
            }
            for _ in 0..MAX_ATTEMPTS {
                let dest = dests[rng.random_range(0..dests.len())];
                if let Some((start, path)) = draw_feasible_start(map, dest, config.epsilon, &mut rng)? {
                    return Ok(SuiteTask {
                        id,
                        map: map_index,
                        start,
                        dest,
                        optimal_length: (path.len() - 1) as u32,
                    });
                }
            }
            Err(EvalError::InfeasibleTask(id))
        })
        .collect::<Result<_, _>>()?;
    Ok(Suite {
        maps,
        tasks,
        epsilon: config.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: usize,
    pub heuristic: String,
    /// 1 when a path was found.
    pub success: u8,
    pub found_length: u32,
    pub optimal_length: u32,
    pub nodes_explored: u64,
    pub wall_time_ns: u64,
    pub heuristic_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSummary {
    pub heuristic: String,
    pub tasks: usize,
    pub mean_nodes_explored: f64,
    pub mean_search_time_ms: f64,
    pub mean_heuristic_time_ms: f64,
    pub spl: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub heuristics: Vec<HeuristicSummary>,
}

impl SuiteSummary {
    pub fn get(&self, heuristic: &str) -> Option<&HeuristicSummary> {
        self.heuristics.iter().find(|h| h.heuristic == heuristic)
    }
}

/// `(1/N) * sum(S_i * l_i / max(p_i, l_i))`. Records with a zero optimal
/// length are left out.
pub fn spl(records: &[EvalRecord]) -> Result<f64, EvalError> {
    let scored: Vec<f64> = records
        .iter()
        .filter(|r| r.optimal_length > 0)
        .map(|r| {
            let l = r.optimal_length as f64;
            let p = r.found_length as f64;
            r.success as f64 * l / p.max(l)
        })
        .collect();
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

pub fn summarize(heuristic: &str, records: &[EvalRecord]) -> Result<HeuristicSummary, EvalError> {
    let mine: Vec<EvalRecord> = records.iter().filter(|r| r.heuristic == heuristic).cloned().collect();
    if mine.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = mine.len() as f64;
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| mine.iter().map(f).sum::<f64>() / n;
    Ok(HeuristicSummary {
        heuristic: heuristic.to_string(),
        tasks: mine.len(),
        mean_nodes_explored: mean(&|r| r.nodes_explored as f64),
        mean_search_time_ms: mean(&|r| r.wall_time_ns as f64 / 1e6),
        mean_heuristic_time_ms: mean(&|r| r.heuristic_time_ns as f64 / 1e6),
        spl: spl(&mine)?,
        success_rate: mean(&|r| r.success as f64),
    })
}

/// Runs every task once per heuristic. Records come back ordered by task,
/// then by heuristic in the order given.
pub fn run_suite(suite: &Suite, heuristics: &[HeuristicSpec]) -> Result<(SuiteSummary, Vec<EvalRecord>), EvalError> {
    let per_task: Vec<Vec<EvalRecord>> = (0..suite.tasks.len())
        .into_par_iter()
        .map(|i| {
            let meta = &suite.tasks[i];
            let task = suite.task(i);
            heuristics
                .iter()
                .map(|spec| {
                    let mut source = spec.instantiate()?;
                    let result = asd_astar(&task, &mut source)?;
                    let record = EvalRecord {
                        task_id: meta.id,
                        heuristic: spec.name(),
                        success: u8::from(result.found()),
                        found_length: result.path_length,
                        optimal_length: meta.optimal_length,
                        nodes_explored: result.nodes_explored,
                        wall_time_ns: result.wall_time.as_nanos() as u64,
                        heuristic_time_ns: result.heuristic_time.as_nanos() as u64,
                    };
                    if record.success == 1 && record.found_length < record.optimal_length {
                        return Err(EvalError::BelowOptimal {
                            task: meta.id,
                            heuristic: record.heuristic,
                            found: record.found_length,
                            optimal: record.optimal_length,
                        });
                    }
                    Ok(record)
                })
                .collect()
        })
        .collect::<Result<_, EvalError>>()?;
    let records: Vec<EvalRecord> = per_task.into_iter().flatten().collect();
    let summary = SuiteSummary {
        heuristics: heuristics
            .iter()
            .map(|h| summarize(&h.name(), &records))
            .collect::<Result<_, _>>()?,
    };
    Ok((summary, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected csv or json)")),
        }
    }
}

pub const RECORD_COLUMNS: &str =
    "task_id,heuristic,success,found_length,optimal_length,nodes_explored,wall_time_ns,heuristic_time_ns";
pub const SUMMARY_COLUMNS: &str =
    "heuristic,tasks,mean_nodes_explored,mean_search_time_ms,mean_heuristic_time_ms,spl,success_rate";
const SUMMARY_MARKER: &str = "#summary";

#[derive(Serialize, Deserialize)]
struct JsonReport {
    summary: Vec<HeuristicSummary>,
    records: Vec<EvalRecord>,
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Report(e.to_string())
}

/// CSV: record rows under [`RECORD_COLUMNS`], then a `#summary` row, then
/// summary rows under [`SUMMARY_COLUMNS`]. JSON: `{"summary": [..], "records": [..]}`.
pub fn write_report<W: Write>(
    summary: &SuiteSummary,
    records: &[EvalRecord],
    out: W,
    format: ReportFormat,
) -> Result<(), EvalError> {
    match format {
        ReportFormat::Json => {
            let report = JsonReport {
                summary: summary.heuristics.clone(),
                records: records.to_vec(),
            };
            serde_json::to_writer_pretty(out, &report).map_err(|e| EvalError::Report(e.to_string()))?;
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .flexible(true)
                .has_headers(false)
                .from_writer(out);
            w.write_record(RECORD_COLUMNS.split(',')).map_err(csv_err)?;
            for r in records {
                w.serialize(r).map_err(csv_err)?;
            }
            w.write_record([SUMMARY_MARKER]).map_err(csv_err)?;
            w.write_record(SUMMARY_COLUMNS.split(',')).map_err(csv_err)?;
            for s in &summary.heuristics {
                w.serialize(s).map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(
    summary: &SuiteSummary,
    records: &[EvalRecord],
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), EvalError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    write_report(summary, records, &mut out, format)?;
    out.flush()?;
    Ok(())
}

pub fn read_report<R: BufRead>(input: R, format: ReportFormat) -> Result<(SuiteSummary, Vec<EvalRecord>), EvalError> {
    match format {
        ReportFormat::Json => {
            let r: JsonReport = serde_json::from_reader(input).map_err(|e| EvalError::Report(e.to_string()))?;
            Ok((SuiteSummary { heuristics: r.summary }, r.records))
        }
        ReportFormat::Csv => {
            let mut rd = csv::ReaderBuilder::new()
                .flexible(true)
                .has_headers(false)
                .from_reader(input);
            let rows: Vec<csv::StringRecord> = rd.records().collect::<Result<_, _>>().map_err(csv_err)?;
            let marker = rows
                .iter()
                .position(|r| r.get(0) == Some(SUMMARY_MARKER))
                .ok_or_else(|| EvalError::Report("missing #summary block".into()))?;
            let header = |r: Option<&csv::StringRecord>, expected: &str| {
                let got = r.map(|r| r.iter().collect::<Vec<_>>().join(","));
                if got.as_deref() == Some(expected) {
                    Ok(csv::StringRecord::from(expected.split(',').collect::<Vec<_>>()))
                } else {
                    Err(EvalError::Report(format!("expected header {expected:?}, got {got:?}")))
                }
            };
            let record_header = header(rows.first(), RECORD_COLUMNS)?;
            let summary_header = header(rows.get(marker + 1), SUMMARY_COLUMNS)?;
            let records = rows[1..marker]
                .iter()
                .map(|r| r.deserialize(Some(&record_header)).map_err(csv_err))
                .collect::<Result<_, _>>()?;
            let heuristics = rows[marker + 2..]
                .iter()
                .map(|r| r.deserialize(Some(&summary_header)).map_err(csv_err))
                .collect::<Result<_, _>>()?;
            Ok((SuiteSummary { heuristics }, records))
        }
    }
}

pub fn load_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<(SuiteSummary, Vec<EvalRecord>), EvalError> {
    read_report(BufReader::new(fs::File::open(path)?), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(success: u8, optimal: u32, found: u32) -> EvalRecord {
        EvalRecord {
            task_id: 0,
            heuristic: "h".into(),
            success,
            found_length: found,
            optimal_length: optimal,
            nodes_explored: 10,
            wall_time_ns: 1000,
            heuristic_time_ns: 100,
        }
    }

    #[test]
    fn spl_examples() {
        assert_eq!(spl(&[rec(1, 4, 4), rec(1, 7, 7)]).unwrap(), 1.0);
        assert_eq!(spl(&[rec(0, 4, 0), rec(0, 3, 0)]).unwrap(), 0.0);
        assert!((spl(&[rec(1, 4, 5), rec(1, 3, 3)]).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(spl(&[]), Err(EvalError::Empty)));
        assert!(matches!(spl(&[rec(1, 0, 0)]), Err(EvalError::Empty)));
    }

    fn small_suite() -> Suite {
        build_suite(&SuiteConfig {
            map_size: 10,
            maps: 5,
            tasks: 40,
            seed: 3,
            epsilon: 0.9,
        })
        .unwrap()
    }

    #[test]
    fn suite_is_deterministic_and_feasible() {
        let a = small_suite();
        let b = small_suite();
        assert_eq!(a.tasks, b.tasks);
        for t in &a.tasks {
            assert_ne!(t.start, t.dest);
            assert!(t.optimal_length >= 1);
        }
    }

    #[test]
    fn baselines_on_small_suite() {
        let suite = small_suite();
        let specs = [HeuristicSpec::Manhattan, HeuristicSpec::Zero, HeuristicSpec::Oracle];
        let (summary, records) = run_suite(&suite, &specs).unwrap();
        assert_eq!(records.len(), 120);
        assert_eq!(summary.get("manhattan").unwrap().spl, 1.0);
        assert_eq!(summary.get("zero").unwrap().spl, 1.0);
        let oracle = summary.get("oracle").unwrap();
        let mean_len = suite.tasks.iter().map(|t| t.optimal_length as f64).sum::<f64>() / 40.0;
        assert!((oracle.mean_nodes_explored - (mean_len + 1.0)).abs() < 1e-9);
        for trio in records.chunks(3) {
            assert_eq!(trio[0].found_length, trio[1].found_length);
            assert_eq!(trio[0].found_length, trio[2].found_length);
        }
    }

    #[test]
    fn reports_round_trip() {
        let suite = small_suite();
        let (summary, records) = run_suite(
            &suite,
            &[HeuristicSpec::Manhattan, HeuristicSpec::Expert { penalty: 4 }],
        )
        .unwrap();
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let mut buf = Vec::new();
            write_report(&summary, &records, &mut buf, format).unwrap();
            let (s2, r2) = read_report(buf.as_slice(), format).unwrap();
            assert_eq!(r2, records);
            assert_eq!(s2.heuristics.len(), 2);
            for (a, b) in s2.heuristics.iter().zip(&summary.heuristics) {
                assert_eq!(a.heuristic, b.heuristic);
                assert!((a.spl - b.spl).abs() < 1e-12);
                let recomputed = summarize(&a.heuristic, &r2).unwrap();
                assert!((recomputed.mean_nodes_explored - a.mean_nodes_explored).abs() < 1e-9);
                assert!((recomputed.mean_search_time_ms - a.mean_search_time_ms).abs() < 1e-9);
            }
        }
        let mut buf = Vec::new();
        write_report(&summary, &records, &mut buf, ReportFormat::Csv).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(RECORD_COLUMNS));
    }

    #[test]
    fn heuristic_spec_parsing() {
        assert!(matches!(
            HeuristicSpec::parse("manhattan"),
            Ok(HeuristicSpec::Manhattan)
        ));
        assert!(matches!(
            HeuristicSpec::parse("expert:6"),
            Ok(HeuristicSpec::Expert { penalty: 6 })
        ));
        assert!(matches!(
            HeuristicSpec::parse("bogus"),
            Err(EvalError::UnknownHeuristic(_))
        ));
        assert!(HeuristicSpec::parse("riskmap2:/nonexistent/weights.bin").is_err());
    }
}
