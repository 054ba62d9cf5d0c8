//! Grid terrain: per-cell risk scores in `[0, 1]`.
//!
//! Cells are addressed by `(x, y)` with the origin at the top-left; storage is
//! row-major, so cell `(x, y)` lives at index `y * width + x`.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

/// Upper risk bound of generated low-risk cells.
pub const LOW_RISK_MAX: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid dimensions {width}x{height}: {reason}")]
    Dimension {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("risk {value} at cell ({x}, {y}) is outside [0, 1]")]
    RiskOutOfRange { x: usize, y: usize, value: f64 },
    #[error("every cell is high-risk; no destination can be chosen")]
    NoDestination,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Safe,
    LowRisk,
    HighRisk,
    /// Any risk an ingested map may carry outside the generated bands.
    Other,
}

impl CellClass {
    pub fn of(risk: f64) -> Self {
        if risk == 0.0 {
            CellClass::Safe
        } else if risk == 1.0 {
            CellClass::HighRisk
        } else if risk > 0.0 && risk <= LOW_RISK_MAX {
            CellClass::LowRisk
        } else {
            CellClass::Other
        }
    }
}

/// Immutable risk grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMap {
    width: usize,
    height: usize,
    risk: Vec<f64>,
}

impl RiskMap {
    pub fn new(width: usize, height: usize, risk: Vec<f64>) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Dimension {
                width,
                height,
                reason: "width and height must be positive".into(),
            });
        }
        if risk.len() != width * height {
            return Err(MapError::Dimension {
                width,
                height,
                reason: format!("expected {} risk values, got {}", width * height, risk.len()),
            });
        }
        for (i, &value) in risk.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MapError::RiskOutOfRange {
                    x: i % width,
                    y: i / width,
                    value,
                });
            }
        }
        Ok(Self { width, height, risk })
    }

    /// Builds a map from rows (`rows[y][x]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MapError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if let Some(y) = rows.iter().position(|r| r.len() != width) {
            return Err(MapError::Dimension {
                width,
                height,
                reason: format!("row {y} has {} values", rows[y].len()),
            });
        }
        Self::new(width, height, rows.concat())
    }

    pub fn constant(width: usize, height: usize, risk: f64) -> Result<Self, MapError> {
        Self::new(width, height, vec![risk; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.risk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risk.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    /// Row-major risk values.
    pub fn risks(&self) -> &[f64] {
        &self.risk
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    #[inline]
    pub fn risk(&self, cell: Cell) -> f64 {
        self.risk[self.index(cell)]
    }

    /// `1 - risk`, the probability of crossing the cell unharmed.
    #[inline]
    pub fn safety(&self, cell: Cell) -> f64 {
        1.0 - self.risk(cell)
    }

    pub fn class(&self, cell: Cell) -> CellClass {
        CellClass::of(self.risk(cell))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    /// In-bounds 4-neighbours in the fixed order up, down, left, right.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> {
        let (w, h) = (self.width, self.height);
        let Cell { x, y } = cell;
        [
            (y > 0).then(|| Cell::new(x, y - 1)),
            (y + 1 < h).then(|| Cell::new(x, y + 1)),
            (x > 0).then(|| Cell::new(x - 1, y)),
            (x + 1 < w).then(|| Cell::new(x + 1, y)),
        ]
        .into_iter()
        .flatten()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for &r in &self.risk {
            match CellClass::of(r) {
                CellClass::Safe => counts.safe += 1,
                CellClass::LowRisk => counts.low_risk += 1,
                CellClass::HighRisk => counts.high_risk += 1,
                CellClass::Other => counts.other += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub safe: usize,
    pub low_risk: usize,
    pub high_risk: usize,
    pub other: usize,
}

/// Random map with equal thirds of safe, low-risk and high-risk cells.
///
/// Each class gets `floor(W*H / 3)` cells; the `W*H mod 3` leftover cells are
/// safe. Low-risk cells draw their risk uniformly from `(0, 0.1]`.
pub fn generate_random_map(width: usize, height: usize, seed: u64) -> Result<RiskMap, MapError> {
    let area = width * height;
    if width == 0 || height == 0 || area < 3 {
        return Err(MapError::Dimension {
            width,
            height,
            reason: "a generated map needs at least 3 cells".into(),
        });
    }
    let third = area / 3;
    let mut classes = Vec::with_capacity(area);
    classes.extend(std::iter::repeat_n(CellClass::HighRisk, third));
    classes.extend(std::iter::repeat_n(CellClass::LowRisk, third));
    classes.extend(std::iter::repeat_n(CellClass::Safe, area - 2 * third));

    let mut rng = rng::rng_for(seed, Stream::Map, 0);
    classes.shuffle(&mut rng);
    let risk = classes
        .into_iter()
        .map(|class| match class {
            CellClass::HighRisk => 1.0,
            // 1 - [0, 1) keeps zero out of the band.
            CellClass::LowRisk => LOW_RISK_MAX * (1.0 - rng.random::<f64>()),
            _ => 0.0,
        })
        .collect();
    RiskMap::new(width, height, risk)
}

/// Uniformly random cell with risk below 1.
pub fn pick_destination(map: &RiskMap, seed: u64) -> Result<Cell, MapError> {
    let eligible: Vec<Cell> = map.cells().filter(|&c| map.risk(c) < 1.0).collect();
    if eligible.is_empty() {
        return Err(MapError::NoDestination);
    }
    let mut rng = rng::rng_for(seed, Stream::Destination, 0);
    Ok(eligible[rng.random_range(0..eligible.len())])
}

/// Mean-pools `factor x factor` blocks.
pub fn downscale(map: &RiskMap, factor: usize) -> Result<RiskMap, MapError> {
    if factor == 0 || !map.width.is_multiple_of(factor) || !map.height.is_multiple_of(factor) {
        return Err(MapError::Dimension {
            width: map.width,
            height: map.height,
            reason: format!("not divisible by factor {factor}"),
        });
    }
    let (w, h) = (map.width / factor, map.height / factor);
    let block = (factor * factor) as f64;
    let mut out = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            let rows = (by * factor..(by + 1) * factor).map(|y| &map.risk[y * map.width + bx * factor..][..factor]);
            // Mean as `min + mean(r - min)`: a block of identical values pools
            // to that value exactly.
            let min = rows.clone().flatten().copied().fold(f64::INFINITY, f64::min);
            let offset: f64 = rows.flatten().map(|&r| r - min).sum();
            out.push((min + offset / block).clamp(0.0, 1.0));
        }
    }
    RiskMap::new(w, h, out)
}

const MAP_MAGIC: &str = "riskmap";
const MAP_VERSION: &str = "v1";

/// Writes the text map format: a `riskmap v1 <width> <height>` header then one
/// line per row. `f64`'s `Display` is the shortest string that round-trips.
pub fn write_map<W: Write>(map: &RiskMap, mut out: W) -> io::Result<()> {
    writeln!(out, "{MAP_MAGIC} {MAP_VERSION} {} {}", map.width, map.height)?;
    let mut line = String::new();
    for row in map.risk.chunks_exact(map.width) {
        line.clear();
        for (i, r) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&r.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_map<R: BufRead>(input: R) -> Result<RiskMap, MapError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or_else(|| MapError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (width, height) = match fields.as_slice() {
        [MAP_MAGIC, MAP_VERSION, w, h] => {
            let dim = |s: &str| {
                s.parse::<usize>().map_err(|_| MapError::Parse {
                    line: 1,
                    message: format!("bad dimension {s:?}"),
                })
            };
            (dim(w)?, dim(h)?)
        }
        _ => {
            return Err(MapError::Parse {
                line: 1,
                message: format!("expected `{MAP_MAGIC} {MAP_VERSION} <width> <height>`, got {header:?}"),
            })
        }
    };
    if width == 0 || height == 0 {
        return Err(MapError::Parse {
            line: 1,
            message: format!("dimensions {width}x{height} must be positive"),
        });
    }

    let mut risk = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        if rows == height {
            return Err(MapError::Parse {
                line: line_no,
                message: format!("extra row; the header declares {height}"),
            });
        }
        let before = risk.len();
        for (x, tok) in line.split_whitespace().enumerate() {
            let value: f64 = tok.parse().map_err(|_| MapError::Parse {
                line: line_no,
                message: format!("cell ({x}, {rows}): bad number {tok:?}"),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(MapError::RiskOutOfRange { x, y: rows, value });
            }
            risk.push(value);
        }
        if risk.len() - before != width {
            return Err(MapError::Parse {
                line: line_no,
                message: format!("row {rows} has {} values, expected {width}", risk.len() - before),
            });
        }
        rows += 1;
    }
    if rows != height {
        return Err(MapError::Parse {
            line: rows + 2,
            message: format!("found {rows} rows, expected {height}"),
        });
    }
    RiskMap::new(width, height, risk)
}

pub fn save_map(map: &RiskMap, path: impl AsRef<Path>) -> Result<(), MapError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    write_map(map, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<RiskMap, MapError> {
    read_map(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_mean_oracle(map: &RiskMap, factor: usize) -> Vec<f64> {
        let (w, h) = (map.width() / factor, map.height() / factor);
        let mut out = Vec::new();
        for by in 0..h {
            for bx in 0..w {
                let mut sum = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        sum += map.risk(Cell::new(bx * factor + dx, by * factor + dy));
                    }
                }
                out.push(sum / (factor * factor) as f64);
            }
        }
        out
    }

    #[test]
    fn three_cell_map_has_one_of_each() {
        for seed in 0..20 {
            let map = generate_random_map(3, 1, seed).unwrap();
            let c = map.class_counts();
            assert_eq!((c.safe, c.low_risk, c.high_risk, c.other), (1, 1, 1, 0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_random_map(16, 16, 42).unwrap(),
            generate_random_map(16, 16, 42).unwrap()
        );
    }

    #[test]
    fn remainder_cells_are_safe() {
        // floor(256 / 3) = 85, one leftover cell.
        let c = generate_random_map(16, 16, 5).unwrap().class_counts();
        assert_eq!((c.high_risk, c.low_risk, c.safe, c.other), (85, 85, 86, 0));
        assert_eq!(c.high_risk + c.low_risk + c.safe, 256);
    }

    #[test]
    fn tiny_maps_rejected() {
        assert!(matches!(generate_random_map(2, 1, 0), Err(MapError::Dimension { .. })));
        assert!(matches!(generate_random_map(0, 5, 0), Err(MapError::Dimension { .. })));
    }

    #[test]
    fn distinct_seeds_give_distinct_maps() {
        let mut collisions = 0;
        for s in 0..100u64 {
            let a = generate_random_map(16, 16, 2 * s).unwrap();
            let b = generate_random_map(16, 16, 2 * s + 1).unwrap();
            collisions += usize::from(a == b);
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn destination_forced_when_single_safe_cell() {
        let mut risk = vec![1.0; 9];
        risk[4] = 0.0;
        let map = RiskMap::new(3, 3, risk).unwrap();
        for seed in 0..10 {
            assert_eq!(pick_destination(&map, seed).unwrap(), Cell::new(1, 1));
        }
    }

    #[test]
    fn destination_never_high_risk() {
        let map = generate_random_map(16, 16, 11).unwrap();
        for seed in 0..1000 {
            let d = pick_destination(&map, seed).unwrap();
            assert!(map.risk(d) < 1.0);
            assert_eq!(d, pick_destination(&map, seed).unwrap());
        }
    }

    #[test]
    fn all_high_risk_has_no_destination() {
        let map = RiskMap::constant(4, 4, 1.0).unwrap();
        assert!(matches!(pick_destination(&map, 0), Err(MapError::NoDestination)));
    }

    #[test]
    fn downscale_examples() {
        let constant = RiskMap::constant(128, 128, 0.3).unwrap();
        let small = downscale(&constant, 8).unwrap();
        assert_eq!((small.width(), small.height()), (16, 16));
        assert!(small.risks().iter().all(|&r| r == 0.3));

        let two = RiskMap::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(downscale(&two, 2).unwrap().risks(), &[0.5]);

        assert!(matches!(downscale(&two, 3), Err(MapError::Dimension { .. })));
    }

    #[test]
    fn downscale_matches_block_mean() {
        let map = generate_random_map(128, 128, 3).unwrap();
        let fast = downscale(&map, 8).unwrap();
        for (a, b) in fast.risks().iter().zip(block_mean_oracle(&map, 8)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let map = generate_random_map(16, 16, 9).unwrap();
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        assert_eq!(read_map(buf.as_slice()).unwrap(), map);

        let bad = "riskmap v1 2 1\n0.5 1.5\n";
        match read_map(bad.as_bytes()) {
            Err(MapError::RiskOutOfRange { x: 1, y: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }

        let mut short = String::from("riskmap v1 16 16\n");
        for y in 0..16 {
            let n = if y == 15 { 15 } else { 16 };
            short.push_str(&vec!["0"; n].join(" "));
            short.push('\n');
        }
        assert!(matches!(read_map(short.as_bytes()), Err(MapError::Parse { .. })));
        assert!(matches!(
            read_map("riskmap v2 1 1\n0\n".as_bytes()),
            Err(MapError::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn generated_class_balance(w in 1usize..20, h in 1usize..20, seed: u64) {
            prop_assume!(w * h >= 3);
            let c = generate_random_map(w, h, seed).unwrap().class_counts();
            let area = w * h;
            prop_assert_eq!(c.high_risk, area / 3);
            prop_assert!(c.safe.abs_diff(c.low_risk) <= area % 3);
            prop_assert_eq!(c.other, 0);
        }

        #[test]
        fn downscale_composes(seed: u64, a in 1usize..4, b in 1usize..4) {
            let n = 2 * a * b;
            let map = generate_random_map(n, n, seed).unwrap();
            let twice = downscale(&downscale(&map, a).unwrap(), b).unwrap();
            let once = downscale(&map, a * b).unwrap();
            for (x, y) in twice.risks().iter().zip(once.risks()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn arbitrary_risks_round_trip(risk in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let map = RiskMap::new(4, 3, risk).unwrap();
            let mut buf = Vec::new();
            write_map(&map, &mut buf).unwrap();
            prop_assert_eq!(read_map(buf.as_slice()).unwrap(), map);
        }
    }
}
