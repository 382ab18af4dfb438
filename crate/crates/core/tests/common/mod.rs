//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use prs_core::streamgen::{gen_balanced_test, gen_stream, StreamConfig};
use prs_core::LabeledExample;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const MEMORY_SIZE: usize = 500;
pub const LEARNING_RATE: f64 = 0.05;
pub const TEST_PER_CLASS: usize = 50;

/// 20 classes, Pareto(0.6) sizes capped at 3000, five tasks of four classes
/// each mixing head and tail classes, 20% within-task co-occurrence.
pub fn long_tailed_config(seed: u64) -> StreamConfig {
    let tasks = (0..5).map(|t| (0..4).map(|i| t + 5 * i).collect()).collect();
    StreamConfig {
        num_classes: 20,
        alpha: 0.6,
        n_max: 3000,
        feature_dim: 32,
        noise_sigma: 0.3,
        tasks,
        cooccurrence: Vec::new(),
        seed,
    }
    .with_within_task_cooccurrence(0.2)
}

pub fn long_tailed_stream(seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let cfg = long_tailed_config(seed);
    let train = gen_stream(&cfg).expect("valid config");
    let test = gen_balanced_test(&cfg, TEST_PER_CLASS, seed + 100).expect("valid config");
    (train, test)
}
