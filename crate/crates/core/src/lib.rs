//! Risk-constrained grid path planning.
//!
//! The planner searches `(cell, accumulated safety)` states so that every
//! returned path keeps the product of per-cell safeties above a threshold.
//! Heuristics plug in through [`HeuristicSource`]: the Manhattan baseline,
//! exact-oracle and expert tables, and two transformer models whose forward
//! passes are implemented in [`inference`].

pub mod dataset;
pub mod eval;
pub mod heuristics;
pub mod inference;
pub mod oracle;
pub mod riskmap;
pub mod rng;
pub mod safety;
pub mod search;

pub use heuristics::{HeuristicError, HeuristicTable};
pub use riskmap::{Cell, CellClass, MapError, RiskMap};
pub use safety::{path_safety, DEFAULT_EPSILON, SAFETY_SLACK};
pub use search::{asd_astar, HeuristicSource, Manhattan, SearchError, SearchNode, SearchResult, Task};
