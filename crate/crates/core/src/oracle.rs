//! Exact constrained-shortest-path solvers.
//!
//! [`exact_distance`] is a Pareto label-setting search: with unit step costs
//! the labels are settled level by level in increasing distance, and each cell
//! keeps only the `(distance, safety)` labels no other label dominates. Since
//! safety can only shrink along a path, the first level that reaches the
//! destination is optimal.
//!
//! [`brute_force_distance`] enumerates simple paths and exists to check the
//! label-setting solver on small maps.

use thiserror::Error;

use crate::riskmap::{Cell, RiskMap};
use crate::safety::{dominates, meets_threshold};

/// Largest map the path enumerator accepts (cells).
pub const BRUTE_FORCE_MAX_CELLS: usize = 36;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("cell {0} is outside the map")]
    OutOfBounds(Cell),
    #[error("map has {cells} cells; the enumerator is limited to {limit}")]
    MapTooLarge { cells: usize, limit: usize },
}

/// A constrained shortest-path query. `from_safety` is the safety already
/// accumulated on arrival at `from`.
#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub from: Cell,
    pub from_safety: f64,
    pub dest: Cell,
    pub epsilon: f64,
}

impl Query {
    pub fn new(from: Cell, from_safety: f64, dest: Cell, epsilon: f64) -> Self {
        Self {
            from,
            from_safety,
            dest,
            epsilon,
        }
    }

    fn check(&self, map: &RiskMap) -> Result<(), OracleError> {
        for cell in [self.from, self.dest] {
            if !map.contains(cell) {
                return Err(OracleError::OutOfBounds(cell));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Label {
    cell: u32,
    dist: u32,
    safety: f64,
    parent: Option<u32>,
    alive: bool,
}

/// Runs label setting and returns the label arena plus the chosen label at
/// the destination, if any.
fn label_setting(map: &RiskMap, q: &Query) -> Option<(Vec<Label>, u32)> {
    if !meets_threshold(q.from_safety, q.epsilon) {
        return None;
    }
    let dest = map.index(q.dest) as u32;
    let mut labels = vec![Label {
        cell: map.index(q.from) as u32,
        dist: 0,
        safety: q.from_safety,
        parent: None,
        alive: true,
    }];
    if q.from == q.dest {
        return Some((labels, 0));
    }

    let mut at_cell: Vec<Vec<u32>> = vec![Vec::new(); map.len()];
    at_cell[map.index(q.from)].push(0);
    let mut level: Vec<u32> = vec![0];
    let mut dist = 0u32;

    while !level.is_empty() {
        // Higher safety first, then cell order: fixes which parent wins ties.
        level.sort_by(|&a, &b| {
            let (la, lb) = (&labels[a as usize], &labels[b as usize]);
            lb.safety
                .total_cmp(&la.safety)
                .then_with(|| map.cell_at(la.cell as usize).cmp(&map.cell_at(lb.cell as usize)))
        });
        let next_dist = dist + 1;
        let mut next = Vec::new();
        for &id in &level {
            let label = labels[id as usize];
            if !label.alive {
                continue;
            }
            let cell = map.cell_at(label.cell as usize);
            for nb in map.neighbors(cell) {
                let safety = label.safety * map.safety(nb);
                if !meets_threshold(safety, q.epsilon) {
                    continue;
                }
                let slot = map.index(nb);
                let existing = &mut at_cell[slot];
                if existing.iter().any(|&e| {
                    let e = &labels[e as usize];
                    dominates(e.dist, e.safety, next_dist, safety)
                }) {
                    continue;
                }
                existing.retain(|&e| {
                    let other = &mut labels[e as usize];
                    let keep = !dominates(next_dist, safety, other.dist, other.safety);
                    other.alive &= keep;
                    keep
                });
                let new_id = labels.len() as u32;
                labels.push(Label {
                    cell: slot as u32,
                    dist: next_dist,
                    safety,
                    parent: Some(id),
                    alive: true,
                });
                existing.push(new_id);
                next.push(new_id);
            }
        }

        let goal = at_cell[dest as usize]
            .iter()
            .copied()
            .filter(|&id| labels[id as usize].alive)
            .max_by(|&a, &b| {
                labels[a as usize]
                    .safety
                    .total_cmp(&labels[b as usize].safety)
                    .then(b.cmp(&a))
            });
        if let Some(goal) = goal {
            return Some((labels, goal));
        }
        level = next;
        dist = next_dist;
    }
    None
}

/// Minimum number of steps from `from` to `dest` over paths whose safety
/// `from_safety * prod(1 - risk)` stays at or above `epsilon`; `None` when no
/// such path exists.
pub fn exact_distance(map: &RiskMap, q: &Query) -> Result<Option<u32>, OracleError> {
    q.check(map)?;
    Ok(label_setting(map, q).map(|(labels, goal)| labels[goal as usize].dist))
}

/// One optimal path (the safest among equal-length optima), `from` first.
pub fn exact_shortest_path(map: &RiskMap, q: &Query) -> Result<Option<Vec<Cell>>, OracleError> {
    q.check(map)?;
    Ok(label_setting(map, q).map(|(labels, goal)| {
        let mut path = Vec::with_capacity(labels[goal as usize].dist as usize + 1);
        let mut cursor = Some(goal);
        while let Some(id) = cursor {
            let label = &labels[id as usize];
            path.push(map.cell_at(label.cell as usize));
            cursor = label.parent;
        }
        path.reverse();
        path
    }))
}

/// Highest safety any path from each cell to `dest` can keep, for a walker
/// arriving at that cell with safety 1 (the cell's own risk is not charged).
/// A cell can reach `dest` under threshold `epsilon` from arrival safety `s`
/// iff `s * result[cell] >= epsilon`. Dijkstra on the max-product semiring,
/// run backwards from the destination.
pub fn max_safety_to(map: &RiskMap, dest: Cell) -> Result<Vec<f64>, OracleError> {
    if !map.contains(dest) {
        return Err(OracleError::OutOfBounds(dest));
    }
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
        }
    }

    let mut best = vec![0.0; map.len()];
    let mut heap = std::collections::BinaryHeap::new();
    best[map.index(dest)] = 1.0;
    heap.push(Item(1.0, map.index(dest)));
    while let Some(Item(s, slot)) = heap.pop() {
        if s < best[slot] {
            continue;
        }
        let cell = map.cell_at(slot);
        // Stepping from a neighbour into `cell` charges `cell`'s risk.
        let through = s * map.safety(cell);
        for nb in map.neighbors(cell) {
            let j = map.index(nb);
            if through > best[j] {
                best[j] = through;
                heap.push(Item(through, j));
            }
        }
    }
    Ok(best)
}

/// Exhaustive depth-first enumeration of simple paths, with branch-and-bound
/// on the Manhattan lower bound. Revisiting a cell never helps: the path gets
/// longer and its safety cannot grow.
pub fn brute_force_distance(map: &RiskMap, q: &Query) -> Result<Option<u32>, OracleError> {
    if map.len() > BRUTE_FORCE_MAX_CELLS {
        return Err(OracleError::MapTooLarge {
            cells: map.len(),
            limit: BRUTE_FORCE_MAX_CELLS,
        });
    }
    q.check(map)?;
    if !meets_threshold(q.from_safety, q.epsilon) {
        return Ok(None);
    }

    struct Dfs<'a> {
        map: &'a RiskMap,
        dest: Cell,
        epsilon: f64,
        visited: u64,
        best: Option<u32>,
    }

    impl Dfs<'_> {
        fn walk(&mut self, cell: Cell, len: u32, safety: f64) {
            if cell == self.dest {
                self.best = Some(self.best.map_or(len, |b| b.min(len)));
                return;
            }
            let bound = len + cell.manhattan(self.dest) as u32;
            if self.best.is_some_and(|b| bound >= b) {
                return;
            }
            let neighbors: Vec<Cell> = self.map.neighbors(cell).collect();
            for nb in neighbors {
                let bit = 1u64 << self.map.index(nb);
                if self.visited & bit != 0 {
                    continue;
                }
                let s = safety * self.map.safety(nb);
                if !meets_threshold(s, self.epsilon) {
                    continue;
                }
                self.visited |= bit;
                self.walk(nb, len + 1, s);
                self.visited &= !bit;
            }
        }
    }

    let mut dfs = Dfs {
        map,
        dest: q.dest,
        epsilon: q.epsilon,
        visited: 1u64 << map.index(q.from),
        best: None,
    };
    dfs.walk(q.from, 0, q.from_safety);
    Ok(dfs.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskmap::generate_random_map;
    use crate::safety::{is_connected_walk, path_safety};
    use proptest::prelude::*;
    use rand::Rng;

    fn detour() -> RiskMap {
        RiskMap::from_rows(&[vec![0.1, 0.0], vec![0.05, 0.05]]).unwrap()
    }

    fn detour_query() -> Query {
        Query::new(Cell::new(1, 0), 1.0, Cell::new(0, 1), 0.9)
    }

    #[test]
    fn detour_instance() {
        let map = detour();
        let q = detour_query();
        assert_eq!(exact_distance(&map, &q).unwrap(), Some(2));
        assert_eq!(brute_force_distance(&map, &q).unwrap(), Some(2));
        assert_eq!(
            exact_shortest_path(&map, &q).unwrap().unwrap(),
            vec![Cell::new(1, 0), Cell::new(1, 1), Cell::new(0, 1)]
        );
    }

    #[test]
    fn zero_length_query() {
        let map = detour();
        let q = Query::new(Cell::new(0, 0), 1.0, Cell::new(0, 0), 0.9);
        assert_eq!(exact_distance(&map, &q).unwrap(), Some(0));
        assert_eq!(exact_shortest_path(&map, &q).unwrap().unwrap(), vec![Cell::new(0, 0)]);
        assert_eq!(brute_force_distance(&map, &q).unwrap(), Some(0));
    }

    #[test]
    fn walled_destination_is_infeasible() {
        let mut rows = vec![vec![0.0; 5]; 5];
        for (x, y) in [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)] {
            rows[y][x] = 1.0;
        }
        let map = RiskMap::from_rows(&rows).unwrap();
        let q = Query::new(Cell::new(0, 0), 1.0, Cell::new(2, 2), 0.9);
        assert_eq!(exact_distance(&map, &q).unwrap(), None);
        assert_eq!(brute_force_distance(&map, &q).unwrap(), None);
        assert_eq!(exact_shortest_path(&map, &q).unwrap(), None);
    }

    #[test]
    fn max_safety_agrees_with_feasibility() {
        for m in 0..50 {
            let map = generate_random_map(8, 8, 500 + m).unwrap();
            let dest = map.cells().find(|&c| map.risk(c) < 1.0).unwrap();
            let best = max_safety_to(&map, dest).unwrap();
            for from in map.cells() {
                for s in [0.9, 0.95, 1.0] {
                    let feasible = exact_distance(&map, &Query::new(from, s, dest, 0.9)).unwrap().is_some();
                    assert_eq!(
                        feasible,
                        meets_threshold(s * best[map.index(from)], 0.9),
                        "map {m} from {from} s {s}"
                    );
                }
            }
        }
        let map = detour();
        let best = max_safety_to(&map, Cell::new(0, 1)).unwrap();
        assert!((best[map.index(Cell::new(1, 0))] - 0.9025).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let map = detour();
        let q = Query::new(Cell::new(2, 0), 1.0, Cell::new(0, 0), 0.9);
        assert_eq!(exact_distance(&map, &q), Err(OracleError::OutOfBounds(Cell::new(2, 0))));
        let big = RiskMap::constant(7, 7, 0.0).unwrap();
        let q = Query::new(Cell::new(0, 0), 1.0, Cell::new(1, 0), 0.9);
        assert!(matches!(
            brute_force_distance(&big, &q),
            Err(OracleError::MapTooLarge { .. })
        ));
    }

    #[test]
    fn label_setting_matches_enumeration_4x4() {
        for m in 0..100 {
            let map = generate_random_map(4, 4, 1000 + m).unwrap();
            let dest = map.cells().find(|&c| map.risk(c) < 1.0).unwrap();
            for from in map.cells() {
                let q = Query::new(from, 1.0, dest, 0.9);
                assert_eq!(
                    exact_distance(&map, &q).unwrap(),
                    brute_force_distance(&map, &q).unwrap(),
                    "map {m} from {from}"
                );
            }
        }
    }

    #[test]
    fn label_setting_matches_enumeration_6x6() {
        let mut rng = crate::rng::rng_from_seed(77);
        for i in 0..1000u64 {
            let map = generate_random_map(6, 6, i / 10).unwrap();
            let from = map.cell_at(rng.random_range(0..36));
            let dest = map.cell_at(rng.random_range(0..36));
            let safety = rng.random_range(0.9..=1.0);
            let q = Query::new(from, safety, dest, 0.9);
            assert_eq!(
                exact_distance(&map, &q).unwrap(),
                brute_force_distance(&map, &q).unwrap(),
                "query {i}"
            );
        }
    }

    #[test]
    fn path_is_consistent_16x16() {
        let mut rng = crate::rng::rng_from_seed(3);
        for i in 0..1000u64 {
            let map = generate_random_map(16, 16, i / 10).unwrap();
            let from = map.cell_at(rng.random_range(0..256));
            let dest = map.cell_at(rng.random_range(0..256));
            let q = Query::new(from, 1.0, dest, 0.9);
            let dist = exact_distance(&map, &q).unwrap();
            let path = exact_shortest_path(&map, &q).unwrap();
            assert_eq!(dist, path.as_ref().map(|p| p.len() as u32 - 1));
            if let Some(p) = path {
                assert_eq!((p[0], *p.last().unwrap()), (from, dest));
                assert!(is_connected_walk(&map, &p));
                assert!(meets_threshold(path_safety(&map, &p), 0.9));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monotone_in_budget_and_threshold(
            seed in 0u64..1000,
            from in 0usize..64,
            dest in 0usize..64,
            s_lo in 0.9f64..1.0,
            bump in 0.0f64..0.1,
        ) {
            let map = generate_random_map(8, 8, seed).unwrap();
            let (from, dest) = (map.cell_at(from), map.cell_at(dest));
            let s_hi = (s_lo + bump).min(1.0);
            let len = |s, e| exact_distance(&map, &Query::new(from, s, dest, e)).unwrap();
            // None is "infinitely long": Some(_) < None under this mapping.
            let key = |d: Option<u32>| d.unwrap_or(u32::MAX);
            prop_assert!(key(len(s_hi, 0.9)) <= key(len(s_lo, 0.9)));
            prop_assert!(key(len(1.0, 0.85)) <= key(len(1.0, 0.9)));
            prop_assert!(key(len(1.0, 0.9)) <= key(len(1.0, 0.95)));
        }

        #[test]
        fn manhattan_bounds_every_optimal_prefix(seed in 0u64..1000, from in 0usize..64, dest in 0usize..64) {
            let map = generate_random_map(8, 8, seed).unwrap();
            let (from, dest) = (map.cell_at(from), map.cell_at(dest));
            if let Some(path) = exact_shortest_path(&map, &Query::new(from, 1.0, dest, 0.9)).unwrap() {
                let mut safety = 1.0;
                for (i, &cell) in path.iter().enumerate() {
                    if i > 0 {
                        safety *= map.safety(cell);
                    }
                    let d = exact_distance(&map, &Query::new(cell, safety, dest, 0.9)).unwrap().unwrap();
                    prop_assert!(cell.manhattan(dest) as u32 <= d);
                    prop_assert_eq!(d as usize, path.len() - 1 - i);
                }
            }
        }
    }
}
