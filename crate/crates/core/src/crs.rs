//! Conventional reservoir sampling (Vitter's Algorithm R).
//!
//! Every datapoint of the stream ends up in the memory with probability
//! `m / n`, where `n` counts datapoints seen so far.

use rand::Rng as _;

use crate::error::Result;
use crate::memory::ReplayMemory;
use crate::policy::{MemoryPolicy, StepOutcome};
use crate::stats::RunningStats;
use crate::types::LabeledExample;
use crate::Rng;

/// One reservoir step. `stats` must already include `example`.
pub fn crs_step(
    memory: &mut ReplayMemory,
    stats: &RunningStats,
    example: LabeledExample,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    let m = memory.capacity();
    if memory.len() < m {
        memory.insert(example)?;
        return Ok(StepOutcome::Fill);
    }
    let n = stats.total_seen().max(1);
    let probability = (m as f64 / n as f64).min(1.0);
    // Algorithm R: draw j uniformly in [0, n); keep the item iff j < m and
    // overwrite slot j, which is uniform over the stored samples.
    let j = rng.random_range(0..n);
    if j < m as u64 {
        let victim = memory.at_slot(j as usize).id;
        memory.remove(victim)?;
        memory.insert(example)?;
        Ok(StepOutcome::Admit {
            victim,
            probability,
            over_class: None,
        })
    } else {
        Ok(StepOutcome::Reject { probability })
    }
}

/// [`MemoryPolicy`] wrapper around [`crs_step`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Crs;

impl MemoryPolicy for Crs {
    fn step(
        &mut self,
        memory: &mut ReplayMemory,
        stats: &RunningStats,
        example: LabeledExample,
        rng: &mut Rng,
    ) -> Result<StepOutcome> {
        crs_step(memory, stats, example, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::types::MultiHotLabel;

    fn run(n: u64, m: usize, seed: u64) -> (ReplayMemory, Vec<StepOutcome>) {
        let mut mem = ReplayMemory::new(m);
        let mut stats = RunningStats::new();
        let mut rng = seeded_rng(seed);
        let mut outcomes = Vec::new();
        for id in 0..n {
            let ex = LabeledExample::new(id, vec![], MultiHotLabel::new([(id % 3) as usize]));
            stats.update(&ex.label);
            outcomes.push(crs_step(&mut mem, &stats, ex, &mut rng).unwrap());
            assert_eq!(mem.len(), (id as usize + 1).min(m));
        }
        (mem, outcomes)
    }

    #[test]
    fn under_capacity_keeps_everything() {
        let (mem, outcomes) = run(5, 10, 1);
        assert_eq!(mem.sorted_ids(), vec![0, 1, 2, 3, 4]);
        assert!(outcomes.iter().all(|o| *o == StepOutcome::Fill));
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, oa) = run(300, 10, 7);
        let (b, ob) = run(300, 10, 7);
        assert_eq!(a.sorted_ids(), b.sorted_ids());
        assert_eq!(oa, ob);
        let (c, _) = run(300, 10, 8);
        assert_ne!(a.sorted_ids(), c.sorted_ids());
    }

    #[test]
    fn inclusion_rate_matches_m_over_n() {
        let (n, m, trials) = (100u64, 10usize, 10_000u64);
        let mut hits = vec![0u64; n as usize];
        for seed in 0..trials {
            let (mem, _) = run(n, m, seed);
            for id in mem.sorted_ids() {
                hits[id as usize] += 1;
            }
        }
        let p = m as f64 / n as f64;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for (id, &h) in hits.iter().enumerate() {
            let dev = (h as f64 - trials as f64 * p).abs();
            assert!(dev <= 4.0 * sd, "item {id}: {h} hits, {dev} > 4 sd");
        }
    }

    #[test]
    fn victim_uniform_over_stored_samples() {
        // Victim rank among the stored ids, collected over many replacements.
        let m = 10;
        let mut counts = [0u64; 10];
        let mut total = 0u64;
        let mut seed = 0;
        while total < 10_000 {
            let mut mem = ReplayMemory::new(m);
            let mut stats = RunningStats::new();
            let mut rng = seeded_rng(10_000 + seed);
            seed += 1;
            for id in 0..40u64 {
                let ex = LabeledExample::new(id, vec![], MultiHotLabel::new([0]));
                stats.update(&ex.label);
                let ids = mem.sorted_ids();
                if let StepOutcome::Admit { victim, .. } =
                    crs_step(&mut mem, &stats, ex, &mut rng).unwrap()
                {
                    let rank = ids.binary_search(&victim).unwrap();
                    counts[rank] += 1;
                    total += 1;
                }
            }
        }
        let expected = total as f64 / m as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 9 dof, alpha = 0.001
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts = {counts:?}");
    }
}
