//! Path-safety arithmetic shared by the search, the oracles and the dataset
//! labels, so all of them agree on what "feasible" means.

use crate::riskmap::{Cell, RiskMap};

/// Absolute slack applied to every safety comparison.
pub const SAFETY_SLACK: f64 = 1e-12;

/// Threshold used throughout when none is given.
pub const DEFAULT_EPSILON: f64 = 0.9;

#[inline]
pub fn meets_threshold(safety: f64, epsilon: f64) -> bool {
    safety >= epsilon - SAFETY_SLACK
}

/// `(g_a, s_a)` dominates `(g_b, s_b)`: no longer and no less safe.
#[inline]
pub fn dominates(g_a: u32, s_a: f64, g_b: u32, s_b: f64) -> bool {
    g_a <= g_b && s_a >= s_b - SAFETY_SLACK
}

/// Accumulated safety of a path: product of `1 - risk` over every cell
/// entered, the departure cell excluded. An empty or single-cell path is 1.
pub fn path_safety(map: &RiskMap, path: &[Cell]) -> f64 {
    path.iter().skip(1).map(|&c| map.safety(c)).product()
}

/// Checks a path is a 4-connected walk inside the map.
pub fn is_connected_walk(map: &RiskMap, path: &[Cell]) -> bool {
    path.iter().all(|&c| map.contains(c)) && path.windows(2).all(|w| w[0].manhattan(w[1]) == 1)
}
