//! Shared fixtures for the benchmarks.

use asdplanner::eval::{build_suite, Suite, SuiteConfig};
use asdplanner::inference::{Architecture, ModelWeights};

/// A small deterministic suite: `tasks` tasks over 10 maps.
pub fn suite(size: usize, tasks: usize) -> Suite {
    let mut config = SuiteConfig::new(size, 42);
    config.maps = 10;
    config.tasks = tasks;
    build_suite(&config).expect("benchmark suite builds")
}

/// Random riskmap2 weights at the fixture hyperparameters.
pub fn riskmap2_weights(side: usize) -> ModelWeights {
    ModelWeights::random(Architecture::riskmap2(side, 4, 64, 3, 4, 256), 1).expect("valid architecture")
}

/// Random state weights padded to `max_size`.
pub fn state_weights(max_size: usize) -> ModelWeights {
    ModelWeights::random(Architecture::state(max_size, 64, 3, 4, 256), 2).expect("valid architecture")
}
