mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use prs_core::curation::{balanced_test_split, AnnotatedImage};
use prs_core::experiment::{run_experiment, simulate_memory, ExperimentConfig, Method};
use prs_core::metrics::gradient_variance_trace;
use prs_core::policy::{MemoryPolicy, StepOutcome};
use prs_core::prs::Prs;
use prs_core::streamgen::{gen_stream, StreamConfig};
use prs_core::{seeded_rng, ReplayMemory, RunningStats};

use common::{long_tailed_stream, LEARNING_RATE};

fn image_strategy() -> impl Strategy<Value = Vec<AnnotatedImage>> {
    prop::collection::vec(prop::collection::btree_set(0..5usize, 1..3), 1..60).prop_map(|sets| {
        sets.into_iter()
            .enumerate()
            .map(|(i, s)| AnnotatedImage::new(format!("{i}"), s.into_iter().map(|c| format!("c{c}"))))
            .collect()
    })
}

proptest! {
    #[test]
    fn test_split_covers_every_class(images in image_strategy(), k in 0usize..3, seed in any::<u64>()) {
        let mut avail: BTreeMap<&str, usize> = BTreeMap::new();
        for img in &images {
            for l in &img.labels {
                *avail.entry(l).or_default() += 1;
            }
        }
        match balanced_test_split(&images, k, seed) {
            Err(_) => prop_assert!(avail.values().any(|&n| n < k + 1)),
            Ok((train, test)) => {
                prop_assert_eq!(train.len() + test.len(), images.len());
                let ids: BTreeSet<&str> = train.iter().chain(&test).map(|i| i.id.as_str()).collect();
                prop_assert_eq!(ids.len(), images.len());
                for class in avail.keys() {
                    let covered = test.iter().filter(|i| i.labels.contains(*class)).count();
                    prop_assert!(covered >= k, "class {} covered {} < {}", class, covered, k);
                }
            }
        }
    }

    #[test]
    fn variance_trace_is_rotation_invariant(
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..12),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let (s, c) = angle.sin_cos();
        let rotated: Vec<Vec<f64>> = grads.iter().map(|g| vec![c * g[0] - s * g[1], s * g[0] + c * g[1]]).collect();
        let a = gradient_variance_trace(&grads).unwrap();
        let b = gradient_variance_trace(&rotated).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn prs_memory_counts_stay_consistent_over_a_stream() {
    let cfg = StreamConfig::single_label(8, 0.5, 400, 4).with_within_task_cooccurrence(0.3);
    let stream = gen_stream(&cfg).unwrap();
    let mut mem = ReplayMemory::new(64);
    let mut stats = RunningStats::new();
    let mut policy = Prs { rho: -0.3 };
    let mut rng = seeded_rng(4);
    for ex in stream {
        stats.update(&ex.label);
        let id = ex.id;
        let outcome = policy.step(&mut mem, &stats, ex, &mut rng).unwrap();
        match outcome {
            StepOutcome::Fill => assert!(mem.contains(id)),
            StepOutcome::Admit { victim, .. } => {
                assert!(mem.contains(id));
                assert!(!mem.contains(victim));
            }
            StepOutcome::Reject { .. } => assert!(!mem.contains(id)),
        }
        assert!(mem.len() <= 64);
        assert_eq!(mem.class_counts(), mem.recount().as_slice());
    }
    assert!(mem.is_full());
}

#[test]
fn finetune_forgets_more_than_multitask_learns_jointly() {
    let (train, test) = long_tailed_stream(0);
    let run = |method| {
        let cfg = ExperimentConfig {
            method,
            memory_size: 300,
            lr: LEARNING_RATE,
            ..ExperimentConfig::default()
        };
        run_experiment(&train, &test, &cfg).unwrap()
    };
    let finetune = run(Method::Finetune);
    let multitask = run(Method::Multitask);
    let f1 = |log: &prs_core::experiment::EpisodeLog| log.final_value(None, "C-F1").unwrap();
    assert!(f1(&multitask) > f1(&finetune), "{} vs {}", f1(&multitask), f1(&finetune));
    assert!(finetune.final_value(None, "forgetting").unwrap() > 0.3);
    assert!(multitask.final_value(None, "forgetting").is_none());
}

#[test]
fn crs_memory_tracks_input_shares() {
    let (train, _) = long_tailed_stream(1);
    let (crs, stats) = simulate_memory(&train, Method::Crs, 0.0, 500, 1).unwrap();
    let head = crs.class_count(0) as f64 / crs.total_label_count() as f64;
    let total: u64 = stats.counts().iter().sum();
    let input = stats.count(0) as f64 / total as f64;
    assert!((head - input).abs() < 0.08, "memory {head} vs input {input}");
}
