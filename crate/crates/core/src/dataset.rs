//! Supervised datasets for the two heuristic models.
//!
//! Riskmap2 entries label every cell of a map for one `(start, dest)` task:
//! cells on the oracle's shortest path get their Manhattan distance to the
//! destination, every other cell gets Manhattan plus a penalty. State entries
//! label a single `(cell, safety)` node with its exact constrained distance.
//!
//! Files are JSON lines: a header object, then one object per entry. Entry
//! `i` depends only on `(seed, i)`, so generation runs in parallel and the
//! output is byte-identical for any worker count.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heuristics::{HeuristicError, HeuristicTable};
use crate::oracle::{exact_distance, exact_shortest_path, max_safety_to, OracleError, Query};
use crate::riskmap::{generate_random_map, pick_destination, Cell, MapError, RiskMap};
use crate::rng::{self, Rng, Stream};
use crate::safety::{meets_threshold, DEFAULT_EPSILON};

pub const DEFAULT_PENALTY: u32 = 4;

/// Draws per entry before it is skipped.
pub const MAX_ATTEMPTS: usize = 64;

pub const DATASET_FORMAT: &str = "asdplanner-dataset";

/// Entries generated per batch before being written.
const BATCH: usize = 512;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error("dataset line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Riskmap2,
    State,
}

impl DatasetKind {
    /// Map sizes the published datasets use.
    pub fn reference_sizes(self) -> &'static [usize] {
        match self {
            DatasetKind::Riskmap2 => &[16, 24, 32],
            DatasetKind::State => &[16, 64],
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "riskmap2" => Ok(DatasetKind::Riskmap2),
            "state" => Ok(DatasetKind::State),
            other => Err(format!("unknown dataset kind `{other}` (expected riskmap2 or state)")),
        }
    }
}

/// Expert labels for one task: Manhattan distance to `dest` on the oracle's
/// shortest path, Manhattan plus `penalty` everywhere else.
pub fn expert_table(
    map: &RiskMap,
    start: Cell,
    dest: Cell,
    epsilon: f64,
    penalty: u32,
) -> Result<HeuristicTable, HeuristicError> {
    let path = exact_shortest_path(map, &Query::new(start, 1.0, dest, epsilon))?
        .ok_or(HeuristicError::NoExpertPath { start, dest })?;
    let mut on_path = vec![false; map.len()];
    for &c in &path {
        on_path[map.index(c)] = true;
    }
    let h = map
        .cells()
        .zip(on_path)
        .map(|(c, on)| (c.manhattan(dest) + if on { 0 } else { penalty as usize }) as f64)
        .collect();
    HeuristicTable::new(map.width(), map.height(), h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Riskmap2Entry {
    pub map: RiskMap,
    pub start: Cell,
    pub dest: Cell,
    /// Row-major, same dimensions as `map`.
    pub expert_h: Vec<u32>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskmapStateEntry {
    pub map: RiskMap,
    pub current: (Cell, f64),
    pub dest: Cell,
    pub expert_h: u32,
}

fn passable(map: &RiskMap) -> Vec<Cell> {
    map.cells().filter(|&c| map.risk(c) < 1.0).collect()
}

/// Cells other than `dest` with a feasible path to it, in row-major order.
pub fn feasible_starts(map: &RiskMap, dest: Cell, epsilon: f64) -> Result<Vec<Cell>, OracleError> {
    let best = max_safety_to(map, dest)?;
    Ok(map
        .cells()
        .filter(|&c| c != dest && map.risk(c) < 1.0 && meets_threshold(best[map.index(c)], epsilon))
        .collect())
}

/// Uniform start among the non-high-risk cells with a feasible path to
/// `dest`, returned with its oracle path; `None` if there is no such cell.
pub fn draw_feasible_start(
    map: &RiskMap,
    dest: Cell,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<Option<(Cell, Vec<Cell>)>, OracleError> {
    let starts = feasible_starts(map, dest, epsilon)?;
    if starts.is_empty() {
        return Ok(None);
    }
    let start = starts[rng.random_range(0..starts.len())];
    let path = exact_shortest_path(map, &Query::new(start, 1.0, dest, epsilon))?
        .expect("max-safety reachability implies a feasible path");
    Ok(Some((start, path)))
}

/// One riskmap2 entry, or `None` when no cell can reach `dest`.
pub fn gen_riskmap2_entry(
    map: &RiskMap,
    dest: Cell,
    seed: u64,
    penalty: u32,
    epsilon: f64,
) -> Result<Option<Riskmap2Entry>, DatasetError> {
    let mut rng = rng::rng_for(seed, Stream::Start, 0);
    riskmap2_entry_with(map, dest, &mut rng, penalty, epsilon)
}

fn riskmap2_entry_with(
    map: &RiskMap,
    dest: Cell,
    rng: &mut Rng,
    penalty: u32,
    epsilon: f64,
) -> Result<Option<Riskmap2Entry>, DatasetError> {
    let Some((start, path)) = draw_feasible_start(map, dest, epsilon, rng)? else {
        return Ok(None);
    };
    let mut expert_h: Vec<u32> = map.cells().map(|c| (c.manhattan(dest) as u32) + penalty).collect();
    for c in path {
        expert_h[map.index(c)] -= penalty;
    }
    Ok(Some(Riskmap2Entry {
        map: map.clone(),
        start,
        dest,
        expert_h,
        epsilon,
    }))
}

/// One state entry, or `None` after [`MAX_ATTEMPTS`] infeasible draws.
pub fn gen_state_entry(
    map: &RiskMap,
    dest: Cell,
    seed: u64,
    epsilon: f64,
) -> Result<Option<RiskmapStateEntry>, DatasetError> {
    let mut rng = rng::rng_for(seed, Stream::Current, 0);
    state_entry_with(map, dest, &mut rng, epsilon)
}

fn state_entry_with(
    map: &RiskMap,
    dest: Cell,
    rng: &mut Rng,
    epsilon: f64,
) -> Result<Option<RiskmapStateEntry>, DatasetError> {
    let candidates = passable(map);
    if candidates.is_empty() {
        return Ok(None);
    }
    let best = max_safety_to(map, dest)?;
    for _ in 0..MAX_ATTEMPTS {
        let cell = candidates[rng.random_range(0..candidates.len())];
        let safety = rng.random_range(0.9..=1.0);
        if !meets_threshold(safety * best[map.index(cell)], epsilon) {
            continue;
        }
        let h = exact_distance(map, &Query::new(cell, safety, dest, epsilon))?
            .expect("max-safety reachability implies a feasible path");
        return Ok(Some(RiskmapStateEntry {
            map: map.clone(),
            current: (cell, safety),
            dest,
            expert_h: h,
        }));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub map_size: usize,
    pub epsilon: f64,
    pub penalty: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Riskmap2Record {
    pub risk: Vec<f64>,
    pub start: [usize; 2],
    pub dest: [usize; 2],
    pub h: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub risk: Vec<f64>,
    pub cur: (usize, usize, f64),
    pub dest: [usize; 2],
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetEntry {
    Riskmap2(Riskmap2Entry),
    State(RiskmapStateEntry),
}

impl DatasetEntry {
    fn to_json(&self) -> serde_json::Result<String> {
        match self {
            DatasetEntry::Riskmap2(e) => serde_json::to_string(&Riskmap2Record {
                risk: e.map.risks().to_vec(),
                start: [e.start.x, e.start.y],
                dest: [e.dest.x, e.dest.y],
                h: e.expert_h.clone(),
            }),
            DatasetEntry::State(e) => serde_json::to_string(&StateRecord {
                risk: e.map.risks().to_vec(),
                cur: (e.current.0.x, e.current.0.y, e.current.1),
                dest: [e.dest.x, e.dest.y],
                h: e.expert_h,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub map_size: usize,
    pub entries: usize,
    pub seed: u64,
    pub penalty: u32,
    pub epsilon: f64,
    /// Consecutive entries sharing one map and destination.
    pub entries_per_map: usize,
}

impl DatasetConfig {
    pub fn new(kind: DatasetKind, map_size: usize, entries: usize, seed: u64) -> Self {
        Self {
            kind,
            map_size,
            entries,
            seed,
            penalty: DEFAULT_PENALTY,
            epsilon: DEFAULT_EPSILON,
            entries_per_map: 8,
        }
    }

    pub fn is_reference_size(&self) -> bool {
        self.kind.reference_sizes().contains(&self.map_size)
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: 1,
            kind: self.kind,
            map_size: self.map_size,
            epsilon: self.epsilon,
            penalty: self.penalty,
            seed: self.seed,
        }
    }

    /// Entry `index`, or `None` if it was skipped.
    pub fn entry(&self, index: usize) -> Result<Option<DatasetEntry>, DatasetError> {
        let group = (index / self.entries_per_map.max(1)) as u64;
        let map = generate_random_map(
            self.map_size,
            self.map_size,
            rng::derive_seed(self.seed, Stream::Map, group),
        )?;
        let dest = pick_destination(&map, rng::derive_seed(self.seed, Stream::Destination, group))?;
        Ok(match self.kind {
            DatasetKind::Riskmap2 => {
                let mut rng = rng::rng_for(self.seed, Stream::Start, index as u64);
                riskmap2_entry_with(&map, dest, &mut rng, self.penalty, self.epsilon)?.map(DatasetEntry::Riskmap2)
            }
            DatasetKind::State => {
                let mut rng = rng::rng_for(self.seed, Stream::Current, index as u64);
                state_entry_with(&map, dest, &mut rng, self.epsilon)?.map(DatasetEntry::State)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub written: usize,
    pub skipped: usize,
    pub wall_time: Duration,
    pub reference_size: bool,
}

/// Writes a dataset to `out`.
pub fn write_dataset<W: Write>(config: &DatasetConfig, mut out: W) -> Result<DatasetSummary, DatasetError> {
    let started = Instant::now();
    let json = |e: serde_json::Error| DatasetError::Format {
        line: 0,
        message: e.to_string(),
    };
    writeln!(out, "{}", serde_json::to_string(&config.header()).map_err(json)?)?;
    let (mut written, mut skipped) = (0, 0);
    for lo in (0..config.entries).step_by(BATCH) {
        let hi = (lo + BATCH).min(config.entries);
        let batch: Vec<Option<String>> = (lo..hi)
            .into_par_iter()
            .map(|i| match config.entry(i)? {
                Some(e) => Ok(Some(e.to_json().map_err(json)?)),
                None => Ok(None),
            })
            .collect::<Result<_, DatasetError>>()?;
        for line in batch {
            match line {
                Some(line) => {
                    writeln!(out, "{line}")?;
                    written += 1;
                }
                None => skipped += 1,
            }
        }
    }
    out.flush()?;
    Ok(DatasetSummary {
        written,
        skipped,
        wall_time: started.elapsed(),
        reference_size: config.is_reference_size(),
    })
}

pub fn gen_dataset(config: &DatasetConfig, path: impl AsRef<Path>) -> Result<DatasetSummary, DatasetError> {
    write_dataset(config, BufWriter::new(fs::File::create(path)?))
}

/// Parses and validates a dataset file.
pub fn read_dataset<R: BufRead>(input: R) -> Result<(DatasetHeader, Vec<DatasetEntry>), DatasetError> {
    let err = |line: usize, message: String| DatasetError::Format { line, message };
    let mut lines = input.lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| err(1, "empty dataset".into()))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| err(1, e.to_string()))?;
    if header.format != DATASET_FORMAT || header.version != 1 {
        return Err(err(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let n = header.map_size;
    let cell = |xy: [usize; 2], line: usize| {
        if xy[0] < n && xy[1] < n {
            Ok(Cell::new(xy[0], xy[1]))
        } else {
            Err(err(line, format!("cell {xy:?} outside {n}x{n}")))
        }
    };
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = match header.kind {
            DatasetKind::Riskmap2 => {
                let r: Riskmap2Record = serde_json::from_str(&line).map_err(|e| err(line_no, e.to_string()))?;
                if r.h.len() != n * n {
                    return Err(err(line_no, format!("{} labels for a {n}x{n} map", r.h.len())));
                }
                DatasetEntry::Riskmap2(Riskmap2Entry {
                    map: RiskMap::new(n, n, r.risk)?,
                    start: cell(r.start, line_no)?,
                    dest: cell(r.dest, line_no)?,
                    expert_h: r.h,
                    epsilon: header.epsilon,
                })
            }
            DatasetKind::State => {
                let r: StateRecord = serde_json::from_str(&line).map_err(|e| err(line_no, e.to_string()))?;
                DatasetEntry::State(RiskmapStateEntry {
                    map: RiskMap::new(n, n, r.risk)?,
                    current: (cell([r.cur.0, r.cur.1], line_no)?, r.cur.2),
                    dest: cell(r.dest, line_no)?,
                    expert_h: r.h,
                })
            }
        };
        entries.push(entry);
    }
    Ok((header, entries))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<DatasetEntry>), DatasetError> {
    read_dataset(BufReader::new(fs::File::open(path)?))
}
