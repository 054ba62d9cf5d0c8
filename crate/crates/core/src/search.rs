//! ASD A*: A* over `(cell, accumulated safety)` states.
//!
//! A state is a cell plus the safety accumulated on the way there. Children
//! whose safety drops below the threshold are never generated, and a state is
//! discarded when an already-expanded state at the same cell is at least as
//! short and at least as safe. Each cell therefore keeps a Pareto frontier of
//! expanded `(g, safety)` pairs rather than a single closed flag, and a cell
//! can be expanded again when it is reached on a safer but longer path.
//!
//! Open-list order: lowest `f`, then highest `g`, then highest safety, then
//! first inserted. Preferring depth on ties means a perfect heuristic expands
//! exactly the nodes of one optimal path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::heuristics::HeuristicError;
use crate::riskmap::{Cell, RiskMap};
use crate::safety::{dominates, meets_threshold, path_safety, DEFAULT_EPSILON};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("{what} cell {cell} is outside the {width}x{height} map")]
    OutOfBounds {
        what: &'static str,
        cell: Cell,
        width: usize,
        height: usize,
    },
    #[error("epsilon {0} is not in (0, 1]")]
    BadEpsilon(f64),
    #[error("heuristic `{name}` returned {value} at {cell}; values must be finite and non-negative")]
    InvalidHeuristic { name: String, cell: Cell, value: f64 },
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
}

/// One planning problem.
#[derive(Debug, Clone, Copy)]
pub struct Task<'m> {
    pub map: &'m RiskMap,
    pub start: Cell,
    pub dest: Cell,
    pub epsilon: f64,
}

impl<'m> Task<'m> {
    /// Task with the default threshold of 0.9.
    pub fn new(map: &'m RiskMap, start: Cell, dest: Cell) -> Self {
        Self::with_epsilon(map, start, dest, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(map: &'m RiskMap, start: Cell, dest: Cell, epsilon: f64) -> Self {
        Self {
            map,
            start,
            dest,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        for (what, cell) in [("start", self.start), ("destination", self.dest)] {
            if !self.map.contains(cell) {
                return Err(SearchError::OutOfBounds {
                    what,
                    cell,
                    width: self.map.width(),
                    height: self.map.height(),
                });
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(SearchError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Supplier of heuristic values.
///
/// `prepare` runs once per task before the search starts; per-task models
/// do their one forward pass there. `estimate` returns `None` when the
/// source knows the state cannot reach the destination, in which case the
/// state is not inserted.
pub trait HeuristicSource {
    fn name(&self) -> String;

    fn prepare(&mut self, _task: &Task<'_>) -> Result<(), HeuristicError> {
        Ok(())
    }

    fn estimate(&self, task: &Task<'_>, cell: Cell, safety: f64) -> Option<f64>;
}

impl<H: HeuristicSource + ?Sized> HeuristicSource for Box<H> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn prepare(&mut self, task: &Task<'_>) -> Result<(), HeuristicError> {
        (**self).prepare(task)
    }

    fn estimate(&self, task: &Task<'_>, cell: Cell, safety: f64) -> Option<f64> {
        (**self).estimate(task, cell, safety)
    }
}

/// `|dx| + |dy|` to the destination.
pub fn manhattan_heuristic(task: &Task<'_>, cell: Cell) -> f64 {
    cell.manhattan(task.dest) as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Manhattan;

impl HeuristicSource for Manhattan {
    fn name(&self) -> String {
        "manhattan".into()
    }

    fn estimate(&self, task: &Task<'_>, cell: Cell, _safety: f64) -> Option<f64> {
        Some(manhattan_heuristic(task, cell))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub cell: Cell,
    pub safety: f64,
    pub g: u32,
    pub f: f64,
    pub parent: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Start first, destination last; `None` when no feasible path exists.
    pub path: Option<Vec<Cell>>,
    pub path_length: u32,
    pub path_safety: f64,
    /// Pop-and-expand events, the final goal pop included.
    pub nodes_explored: u64,
    /// Everything, heuristic preparation included.
    pub wall_time: Duration,
    /// Time spent inside `prepare` and `estimate`.
    pub heuristic_time: Duration,
    /// Expanded states in order, when tracing was requested.
    pub trace: Option<Vec<SearchNode>>,
}

impl SearchResult {
    pub fn found(&self) -> bool {
        self.path.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchConfig {
    pub trace: bool,
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    g: u32,
    safety: f64,
    seq: u64,
    node: u32,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // BinaryHeap pops the greatest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.cmp(&other.g))
            .then(self.safety.total_cmp(&other.safety))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Expanded `(g, safety)` pairs per cell, mutually non-dominated.
struct ExpandedFrontier {
    cells: Vec<Vec<(u32, f64)>>,
}

impl ExpandedFrontier {
    fn new(len: usize) -> Self {
        Self {
            cells: vec![Vec::new(); len],
        }
    }

    fn is_dominated(&self, slot: usize, g: u32, safety: f64) -> bool {
        self.cells[slot].iter().any(|&(eg, es)| dominates(eg, es, g, safety))
    }

    fn insert(&mut self, slot: usize, g: u32, safety: f64) {
        let frontier = &mut self.cells[slot];
        frontier.retain(|&(eg, es)| !dominates(g, safety, eg, es));
        frontier.push((g, safety));
    }
}

pub fn asd_astar<H: HeuristicSource + ?Sized>(task: &Task<'_>, heuristic: &mut H) -> Result<SearchResult, SearchError> {
    asd_astar_with(task, heuristic, SearchConfig::default())
}

pub fn asd_astar_with<H: HeuristicSource + ?Sized>(
    task: &Task<'_>,
    heuristic: &mut H,
    config: SearchConfig,
) -> Result<SearchResult, SearchError> {
    task.validate()?;
    let wall = Instant::now();
    let mut heuristic_time = Duration::ZERO;

    let t = Instant::now();
    heuristic.prepare(task)?;
    heuristic_time += t.elapsed();

    let map = task.map;
    let mut nodes: Vec<SearchNode> = Vec::new();
    let mut open = BinaryHeap::new();
    let mut expanded = ExpandedFrontier::new(map.len());
    let mut trace = config.trace.then(Vec::new);
    let mut seq = 0u64;
    let mut nodes_explored = 0u64;

    let mut evaluate = |cell: Cell, safety: f64| -> Result<Option<f64>, SearchError> {
        let t = Instant::now();
        let h = heuristic.estimate(task, cell, safety);
        heuristic_time += t.elapsed();
        match h {
            Some(v) if !(v.is_finite() && v >= 0.0) => Err(SearchError::InvalidHeuristic {
                name: heuristic.name(),
                cell,
                value: v,
            }),
            other => Ok(other),
        }
    };

    let mut goal = None;
    if let Some(h) = evaluate(task.start, 1.0)? {
        nodes.push(SearchNode {
            cell: task.start,
            safety: 1.0,
            g: 0,
            f: h,
            parent: None,
        });
        open.push(OpenEntry {
            f: h,
            g: 0,
            safety: 1.0,
            seq,
            node: 0,
        });
        seq += 1;
    }

    while let Some(entry) = open.pop() {
        let node = nodes[entry.node as usize];
        let slot = map.index(node.cell);
        if expanded.is_dominated(slot, node.g, node.safety) {
            continue;
        }
        nodes_explored += 1;
        if let Some(trace) = trace.as_mut() {
            trace.push(node);
        }
        if node.cell == task.dest {
            goal = Some(entry.node);
            break;
        }
        expanded.insert(slot, node.g, node.safety);

        for child in map.neighbors(node.cell) {
            let safety = node.safety * map.safety(child);
            if !meets_threshold(safety, task.epsilon) {
                continue;
            }
            let g = node.g + 1;
            if expanded.is_dominated(map.index(child), g, safety) {
                continue;
            }
            let Some(h) = evaluate(child, safety)? else {
                continue;
            };
            let id = nodes.len() as u32;
            let f = g as f64 + h;
            nodes.push(SearchNode {
                cell: child,
                safety,
                g,
                f,
                parent: Some(entry.node),
            });
            open.push(OpenEntry {
                f,
                g,
                safety,
                seq,
                node: id,
            });
            seq += 1;
        }
    }

    let path = goal.map(|mut id| {
        let mut path = vec![nodes[id as usize].cell];
        while let Some(parent) = nodes[id as usize].parent {
            path.push(nodes[parent as usize].cell);
            id = parent;
        }
        path.reverse();
        path
    });
    let (path_length, path_safety) = match &path {
        Some(p) => ((p.len() - 1) as u32, path_safety(map, p)),
        None => (0, 0.0),
    };
    Ok(SearchResult {
        path,
        path_length,
        path_safety,
        nodes_explored,
        wall_time: wall.elapsed(),
        heuristic_time,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_distance, Query};
    use crate::riskmap::{generate_random_map, pick_destination};
    use crate::safety::is_connected_walk;
    use proptest::prelude::*;

    fn detour() -> RiskMap {
        RiskMap::from_rows(&[vec![0.1, 0.0], vec![0.05, 0.05]]).unwrap()
    }

    #[test]
    fn takes_the_safe_detour() {
        let map = detour();
        let task = Task::new(&map, Cell::new(1, 0), Cell::new(0, 1));
        let r = asd_astar(&task, &mut Manhattan).unwrap();
        assert_eq!(
            r.path.as_deref(),
            Some(&[Cell::new(1, 0), Cell::new(1, 1), Cell::new(0, 1)][..])
        );
        assert_eq!(r.path_length, 2);
        assert!((r.path_safety - 0.9025).abs() < 1e-12);
        let rejected = path_safety(&map, &[Cell::new(1, 0), Cell::new(0, 0), Cell::new(0, 1)]);
        assert!((rejected - 0.855).abs() < 1e-12);
        assert!(!meets_threshold(rejected, 0.9));
    }

    #[test]
    fn start_equals_dest() {
        let map = detour();
        let task = Task::new(&map, Cell::new(0, 0), Cell::new(0, 0));
        let r = asd_astar(&task, &mut Manhattan).unwrap();
        assert_eq!(r.path_length, 0);
        assert_eq!(r.path_safety, 1.0);
        assert_eq!(r.nodes_explored, 1);
    }

    #[test]
    fn single_risky_edge_is_infeasible() {
        let map = RiskMap::from_rows(&[vec![0.0, 0.2]]).unwrap();
        let task = Task::new(&map, Cell::new(0, 0), Cell::new(1, 0));
        let r = asd_astar(&task, &mut Manhattan).unwrap();
        assert!(r.path.is_none());
        assert_eq!(r.nodes_explored, 1);
    }

    #[test]
    fn rejects_bad_tasks() {
        let map = detour();
        let task = Task::new(&map, Cell::new(0, 0), Cell::new(0, 2));
        assert!(matches!(
            asd_astar(&task, &mut Manhattan),
            Err(SearchError::OutOfBounds { .. })
        ));
        let task = Task::with_epsilon(&map, Cell::new(0, 0), Cell::new(0, 1), 0.0);
        assert!(matches!(
            asd_astar(&task, &mut Manhattan),
            Err(SearchError::BadEpsilon(_))
        ));
    }

    struct Negative;

    impl HeuristicSource for Negative {
        fn name(&self) -> String {
            "negative".into()
        }
        fn estimate(&self, _: &Task<'_>, _: Cell, _: f64) -> Option<f64> {
            Some(-1.0)
        }
    }

    #[test]
    fn invalid_heuristic_values_are_errors() {
        let map = detour();
        let task = Task::new(&map, Cell::new(1, 0), Cell::new(0, 1));
        assert!(matches!(
            asd_astar(&task, &mut Negative),
            Err(SearchError::InvalidHeuristic { .. })
        ));
    }

    #[test]
    fn manhattan_arithmetic() {
        let map = RiskMap::constant(8, 8, 0.0).unwrap();
        let task = Task::new(&map, Cell::new(0, 0), Cell::new(3, 4));
        assert_eq!(manhattan_heuristic(&task, Cell::new(0, 0)), 7.0);
        assert_eq!(manhattan_heuristic(&task, Cell::new(3, 4)), 0.0);
    }

    #[test]
    fn manhattan_never_exceeds_constrained_distance() {
        let mut checked = 0;
        for i in 0..1000u64 {
            let map = generate_random_map(8, 8, i).unwrap();
            let dest = pick_destination(&map, i).unwrap();
            let node = map.cell_at((i as usize * 37) % 64);
            let task = Task::new(&map, node, dest);
            if let Some(d) = exact_distance(&map, &Query::new(node, 1.0, dest, 0.9)).unwrap() {
                assert!(manhattan_heuristic(&task, node) <= d as f64);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn optimal_and_feasible_on_random_maps(seed in 0u64..100_000, start in 0usize..64) {
            let map = generate_random_map(8, 8, seed).unwrap();
            let dest = pick_destination(&map, seed).unwrap();
            let start = map.cell_at(start);
            let task = Task::new(&map, start, dest);
            let r = asd_astar_with(&task, &mut Manhattan, SearchConfig { trace: true }).unwrap();
            let oracle = exact_distance(&map, &Query::new(start, 1.0, dest, 0.9)).unwrap();
            prop_assert_eq!(r.path.as_ref().map(|p| p.len() as u32 - 1), oracle);
            if let Some(path) = &r.path {
                prop_assert_eq!((path[0], *path.last().unwrap()), (start, dest));
                prop_assert!(is_connected_walk(&map, path));
                prop_assert!(meets_threshold(path_safety(&map, path), 0.9));
                prop_assert!(r.nodes_explored > r.path_length as u64);
            }
            let trace = r.trace.unwrap();
            prop_assert_eq!(trace.len() as u64, r.nodes_explored);
            for node in &trace {
                prop_assert!(meets_threshold(node.safety, 0.9));
            }
            if let Some(path) = &r.path {
                let prefix: Vec<f64> = (1..=path.len()).map(|k| path_safety(&map, &path[..k])).collect();
                prop_assert!(prefix.windows(2).all(|w| w[1] <= w[0]));
            }
        }

        #[test]
        fn node_counts_are_deterministic(seed in 0u64..100_000, start in 0usize..64) {
            let map = generate_random_map(8, 8, seed).unwrap();
            let dest = pick_destination(&map, seed).unwrap();
            let task = Task::new(&map, map.cell_at(start), dest);
            let a = asd_astar(&task, &mut Manhattan).unwrap();
            let b = asd_astar(&task, &mut Manhattan).unwrap();
            prop_assert_eq!(a.nodes_explored, b.nodes_explored);
            prop_assert_eq!(a.path, b.path);
        }
    }
}
