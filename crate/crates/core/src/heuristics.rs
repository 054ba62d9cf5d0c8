//! Concrete heuristic sources.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::dataset::expert_table;
use crate::inference::{riskmap2_decode, riskmap2_forward, state_forward, InferenceError, ModelKind, ModelWeights};
use crate::oracle::{exact_distance, OracleError, Query};
use crate::riskmap::{Cell, RiskMap};
use crate::search::{HeuristicSource, Task};

pub use crate::search::Manhattan;

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("heuristic table is {table_w}x{table_h} but the map is {map_w}x{map_h}")]
    DimMismatch {
        table_w: usize,
        table_h: usize,
        map_w: usize,
        map_h: usize,
    },
    #[error("heuristic table entry {index} is {value}; entries must be finite and non-negative")]
    BadEntry { index: usize, value: f64 },
    #[error("no feasible path to label from {start} to {dest}")]
    NoExpertPath { start: Cell, dest: Cell },
    #[error("table file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-cell heuristic values for one map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicTable {
    width: usize,
    height: usize,
    h: Vec<f64>,
}

impl HeuristicTable {
    pub fn new(width: usize, height: usize, h: Vec<f64>) -> Result<Self, HeuristicError> {
        if h.len() != width * height {
            return Err(HeuristicError::DimMismatch {
                table_w: width,
                table_h: height,
                map_w: h.len(),
                map_h: 1,
            });
        }
        if let Some(index) = h.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HeuristicError::BadEntry { index, value: h[index] });
        }
        Ok(Self { width, height, h })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            h: vec![0.0; width * height],
        }
    }

    /// Manhattan distance to `dest` in every cell.
    pub fn manhattan(map: &RiskMap, dest: Cell) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            h: map.cells().map(|c| c.manhattan(dest) as f64).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.h[cell.y * self.width + cell.x]
    }

    fn check_map(&self, map: &RiskMap) -> Result<(), HeuristicError> {
        if (self.width, self.height) != (map.width(), map.height()) {
            return Err(HeuristicError::DimMismatch {
                table_w: self.width,
                table_h: self.height,
                map_w: map.width(),
                map_h: map.height(),
            });
        }
        Ok(())
    }

    /// Text form: `heuristic-table v1 <width> <height>` then one row per line.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "heuristic-table v1 {} {}", self.width, self.height)?;
        for row in self.h.chunks_exact(self.width) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, HeuristicError> {
        let parse_err = |line: usize, message: String| HeuristicError::Parse { line, message };
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (width, height) = match fields.as_slice() {
            ["heuristic-table", "v1", w, h] => (
                w.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?,
                h.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?,
            ),
            _ => return Err(parse_err(1, format!("bad header {header:?}"))),
        };
        let mut h = Vec::with_capacity(width * height);
        for (i, line) in lines.enumerate() {
            let line = line?;
            for tok in line.split_whitespace() {
                h.push(
                    tok.parse::<f64>()
                        .map_err(|_| parse_err(i + 2, format!("bad number {tok:?}")))?,
                );
            }
        }
        if h.len() != width * height {
            return Err(parse_err(
                0,
                format!("expected {} values, found {}", width * height, h.len()),
            ));
        }
        Self::new(width, height, h)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HeuristicError> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeuristicError> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Replays a fixed table.
#[derive(Debug, Clone)]
pub struct TableSource {
    name: String,
    table: HeuristicTable,
}

pub fn table_source(table: HeuristicTable) -> TableSource {
    TableSource {
        name: "table".into(),
        table,
    }
}

impl TableSource {
    pub fn named(name: impl Into<String>, table: HeuristicTable) -> Self {
        Self {
            name: name.into(),
            table,
        }
    }

    /// All-zero table: turns the search into uniform-cost search.
    pub fn zero(map: &RiskMap) -> Self {
        Self::named("zero", HeuristicTable::zeros(map.width(), map.height()))
    }

    pub fn table(&self) -> &HeuristicTable {
        &self.table
    }
}

impl HeuristicSource for TableSource {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn prepare(&mut self, task: &Task<'_>) -> Result<(), HeuristicError> {
        self.table.check_map(task.map)
    }

    fn estimate(&self, _task: &Task<'_>, cell: Cell, _safety: f64) -> Option<f64> {
        Some(self.table.get(cell))
    }
}

/// Zero heuristic sized to whatever map the task brings.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSource;

impl HeuristicSource for ZeroSource {
    fn name(&self) -> String {
        "zero".into()
    }

    fn estimate(&self, _task: &Task<'_>, _cell: Cell, _safety: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// Builds the expert (oracle path + penalty) table for each task it prepares.
#[derive(Debug, Clone)]
pub struct ExpertTableSource {
    penalty: u32,
    table: Option<HeuristicTable>,
}

impl ExpertTableSource {
    pub fn new(penalty: u32) -> Self {
        Self { penalty, table: None }
    }
}

impl HeuristicSource for ExpertTableSource {
    fn name(&self) -> String {
        "expert".into()
    }

    fn prepare(&mut self, task: &Task<'_>) -> Result<(), HeuristicError> {
        self.table = Some(expert_table(
            task.map,
            task.start,
            task.dest,
            task.epsilon,
            self.penalty,
        )?);
        Ok(())
    }

    fn estimate(&self, _task: &Task<'_>, cell: Cell, _safety: f64) -> Option<f64> {
        Some(self.table.as_ref().expect("prepare runs before estimate").get(cell))
    }
}

/// Exact constrained distance from every queried state. Unreachable states
/// answer `None` and are never inserted.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSource;

pub fn oracle_source() -> OracleSource {
    OracleSource
}

impl HeuristicSource for OracleSource {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, task: &Task<'_>, cell: Cell, safety: f64) -> Option<f64> {
        exact_distance(task.map, &Query::new(cell, safety, task.dest, task.epsilon))
            .expect("search validated the task cells")
            .map(f64::from)
    }
}

/// One riskmap2 forward pass per task, table lookups afterwards.
#[derive(Debug, Clone)]
pub struct Riskmap2Source {
    weights: Arc<ModelWeights>,
    table: Option<HeuristicTable>,
}

pub fn riskmap2_source(weights: Arc<ModelWeights>) -> Result<Riskmap2Source, HeuristicError> {
    if weights.kind() != ModelKind::Riskmap2 {
        return Err(InferenceError::WrongKind {
            expected: "riskmap2",
            found: weights.kind().as_str(),
        }
        .into());
    }
    Ok(Riskmap2Source { weights, table: None })
}

impl Riskmap2Source {
    /// Table from the most recent `prepare`.
    pub fn table(&self) -> Option<&HeuristicTable> {
        self.table.as_ref()
    }
}

impl HeuristicSource for Riskmap2Source {
    fn name(&self) -> String {
        "riskmap2".into()
    }

    fn prepare(&mut self, task: &Task<'_>) -> Result<(), HeuristicError> {
        let logits = riskmap2_forward(task.map, task.start, task.dest, &self.weights)?;
        self.table = Some(riskmap2_decode(&logits, task.map.width())?);
        Ok(())
    }

    fn estimate(&self, _task: &Task<'_>, cell: Cell, _safety: f64) -> Option<f64> {
        Some(self.table.as_ref().expect("prepare runs before estimate").get(cell))
    }
}

/// One state-model forward pass per queried node; outputs clamped at zero.
#[derive(Debug, Clone)]
pub struct StateSource {
    weights: Arc<ModelWeights>,
}

pub fn state_source(weights: Arc<ModelWeights>) -> Result<StateSource, HeuristicError> {
    if weights.kind() != ModelKind::State {
        return Err(InferenceError::WrongKind {
            expected: "state",
            found: weights.kind().as_str(),
        }
        .into());
    }
    Ok(StateSource { weights })
}

impl HeuristicSource for StateSource {
    fn name(&self) -> String {
        "state".into()
    }

    fn prepare(&mut self, task: &Task<'_>) -> Result<(), HeuristicError> {
        let max = self.weights.architecture().side();
        if task.map.width() > max || task.map.height() > max {
            return Err(InferenceError::MapTooLarge {
                width: task.map.width(),
                height: task.map.height(),
                max,
            }
            .into());
        }
        Ok(())
    }

    fn estimate(&self, task: &Task<'_>, cell: Cell, safety: f64) -> Option<f64> {
        let h = state_forward(task.map, cell, safety, task.dest, &self.weights)
            .expect("prepare checked the map against the model");
        Some(h.max(0.0))
    }
}
