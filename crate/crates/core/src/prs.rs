//! Partitioning reservoir sampling.
//!
//! The memory is steered towards per-class target ratios
//! `p_i = n_i^rho / sum_j n_j^rho`, where `n_i` is the running frequency of
//! class `i`. Once the memory is full, each incoming example is admitted with
//! a probability biased towards its rarest classes, and an admission evicts
//! the stored sample whose removal moves the class counts closest to the
//! target.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::ReplayMemory;
use crate::policy::{MemoryPolicy, StepOutcome};
use crate::stats::RunningStats;
use crate::types::{ClassId, LabeledExample, SampleId};
use crate::Rng;

/// Relative tolerance under which two removal distances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Target memory composition for the classes observed so far.
///
/// `ratios` and `quotas` are indexed by class id; unobserved classes hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPartition {
    pub rho: f64,
    pub ratios: Vec<f64>,
    pub quotas: Vec<f64>,
}

impl TargetPartition {
    pub fn ratio(&self, class: ClassId) -> f64 {
        self.ratios.get(class).copied().unwrap_or(0.0)
    }

    pub fn quota(&self, class: ClassId) -> f64 {
        self.quotas.get(class).copied().unwrap_or(0.0)
    }

    pub fn num_classes(&self) -> usize {
        self.ratios.len()
    }
}

/// Signed over-occupancy `l_i - p_i * sum_j l_j` of each class in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub values: Vec<f64>,
}

impl DeltaVector {
    pub fn get(&self, class: ClassId) -> f64 {
        self.values.get(class).copied().unwrap_or(0.0)
    }
}

/// Target partition for `capacity` slots under power of allocation `rho`.
pub fn compute_partition(stats: &RunningStats, rho: f64, capacity: usize) -> Result<TargetPartition> {
    if !rho.is_finite() {
        return Err(Error::config("rho", "must be finite"));
    }
    let counts = stats.counts();
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::EmptyStats);
    }
    // Scaling by the largest count keeps n^rho in range for any finite rho.
    let max = max as f64;
    let weights: Vec<f64> = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (n as f64 / max).powf(rho) })
        .collect();
    let total: f64 = weights.iter().sum();
    let ratios: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let quotas = ratios.iter().map(|p| p * capacity as f64).collect();
    Ok(TargetPartition { rho, ratios, quotas })
}

/// Admission probability of `example` once the memory is full.
///
/// Sums `m_i / n_i` over the example's classes, weighted by a softmax of the
/// negated running frequencies so the rarest class dominates. The result is
/// clamped to `[0, 1]`.
pub fn sample_in_probability(
    example: &LabeledExample,
    stats: &RunningStats,
    partition: &TargetPartition,
) -> Result<f64> {
    if example.label.is_empty() {
        return Err(Error::EmptyLabel(example.id));
    }
    let mut min_n = u64::MAX;
    for c in example.label.iter() {
        let n = stats.count(c);
        if n == 0 {
            return Err(Error::UnobservedClass(c));
        }
        min_n = min_n.min(n);
    }
    // e^{-n_i} shifted by the smallest n_i so the largest weight is e^0.
    let mut norm = 0.0;
    let mut acc = 0.0;
    for c in example.label.iter() {
        let n = stats.count(c);
        let w = (-((n - min_n) as f64)).exp();
        norm += w;
        acc += partition.quota(c) / n as f64 * w;
    }
    Ok((acc / norm).clamp(0.0, 1.0))
}

/// Over-occupancy of each class, scaled by the memory's total label count.
pub fn delta_vector(memory: &ReplayMemory, partition: &TargetPartition) -> DeltaVector {
    let len = memory.class_counts().len().max(partition.num_classes());
    let total = memory.total_label_count() as f64;
    let values = (0..len)
        .map(|c| memory.class_count(c) as f64 - partition.ratio(c) * total)
        .collect();
    DeltaVector { values }
}

/// Draws one over-occupied class (`delta_i > 0`) with probability
/// `softmax(delta_i)` restricted to those classes.
pub fn select_out_class(delta: &DeltaVector, rng: &mut Rng) -> Result<ClassId> {
    let positive: Vec<(ClassId, f64)> = delta
        .values
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(c, &d)| (c, d))
        .collect();
    let max = positive
        .iter()
        .map(|&(_, d)| d)
        .fold(f64::NEG_INFINITY, f64::max);
    if positive.is_empty() {
        return Err(Error::NoOverOccupiedClass);
    }
    let weights: Vec<f64> = positive.iter().map(|&(_, d)| (d - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&(c, _), w) in positive.iter().zip(&weights) {
        if u < *w {
            return Ok(c);
        }
        u -= w;
    }
    Ok(positive.last().expect("non-empty").0)
}

/// Samples of `over_class` that touch the fewest classes with `delta_i <= 0`.
///
/// Equivalent to the argmax of `not(y) . q` with `q_i = [delta_i <= 0]`.
/// Returned ids are ascending.
pub fn candidate_set(
    memory: &ReplayMemory,
    over_class: ClassId,
    delta: &DeltaVector,
) -> Result<Vec<SampleId>> {
    let mut best = usize::MAX;
    let mut out = Vec::new();
    for id in memory.class_members(over_class) {
        let label = &memory.get(id).expect("indexed sample is stored").label;
        let touched = label.iter().filter(|&c| delta.get(c) <= 0.0).count();
        if touched < best {
            best = touched;
            out.clear();
        }
        if touched == best {
            out.push(id);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCandidateSet(over_class));
    }
    Ok(out)
}

/// L1 distance between the class counts left after removing `id` and the
/// target partition applied to their sum.
pub fn removal_distance(memory: &ReplayMemory, id: SampleId, partition: &TargetPartition) -> f64 {
    let label = &memory.get(id).expect("candidate is stored").label;
    let len = memory.class_counts().len().max(partition.num_classes());
    let total = (memory.total_label_count() - label.cardinality()) as f64;
    (0..len)
        .map(|c| {
            let left = memory.class_count(c) as f64 - f64::from(u8::from(label.contains(c)));
            (left - partition.ratio(c) * total).abs()
        })
        .sum()
}

/// Candidates whose removal distance is minimal, within [`TIE_TOLERANCE`].
pub fn best_removals(
    memory: &ReplayMemory,
    candidates: &[SampleId],
    partition: &TargetPartition,
) -> Vec<SampleId> {
    let scored: Vec<(SampleId, f64)> = candidates
        .iter()
        .map(|&id| (id, removal_distance(memory, id, partition)))
        .collect();
    let min = scored.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * min.abs().max(1.0);
    scored
        .into_iter()
        .filter(|&(_, d)| d <= min + tol)
        .map(|(id, _)| id)
        .collect()
}

/// Picks the candidate whose removal advances the memory furthest towards
/// the target partition; ties are broken uniformly at random.
pub fn select_removal(
    memory: &ReplayMemory,
    candidates: &[SampleId],
    partition: &TargetPartition,
    rng: &mut Rng,
) -> SampleId {
    assert!(!candidates.is_empty(), "select_removal needs candidates");
    let best = best_removals(memory, candidates, partition);
    if best.len() == 1 {
        best[0]
    } else {
        best[rng.random_range(0..best.len())]
    }
}

/// Evicts a uniformly random sample of the most populated class; used when
/// no class is over-occupied.
fn fallback_victim(memory: &ReplayMemory, rng: &mut Rng) -> SampleId {
    let (class, _) = memory
        .class_counts()
        .iter()
        .enumerate()
        .fold((0, 0), |best, (c, &l)| if l > best.1 { (c, l) } else { best });
    let members: Vec<SampleId> = memory.class_members(class).collect();
    members[rng.random_range(0..members.len())]
}

/// One partitioning-reservoir step. `stats` must already include `example`.
pub fn prs_step(
    memory: &mut ReplayMemory,
    stats: &RunningStats,
    example: LabeledExample,
    rho: f64,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if memory.len() < memory.capacity() {
        memory.insert(example)?;
        return Ok(StepOutcome::Fill);
    }
    if memory.capacity() == 0 {
        return Ok(StepOutcome::Reject { probability: 0.0 });
    }
    let partition = compute_partition(stats, rho, memory.capacity())?;
    let probability = sample_in_probability(&example, stats, &partition)?;
    if rng.random::<f64>() >= probability {
        return Ok(StepOutcome::Reject { probability });
    }
    let delta = delta_vector(memory, &partition);
    let (victim, over_class) = match select_out_class(&delta, rng) {
        Ok(class) => {
            let candidates = candidate_set(memory, class, &delta)?;
            (select_removal(memory, &candidates, &partition, rng), Some(class))
        }
        Err(Error::NoOverOccupiedClass) => (fallback_victim(memory, rng), None),
        Err(e) => return Err(e),
    };
    memory.remove(victim)?;
    memory.insert(example)?;
    Ok(StepOutcome::Admit {
        victim,
        probability,
        over_class,
    })
}

/// [`MemoryPolicy`] running [`prs_step`] with a fixed power of allocation.
#[derive(Debug, Clone, Copy)]
pub struct Prs {
    pub rho: f64,
}

impl Default for Prs {
    fn default() -> Self {
        Prs { rho: 0.0 }
    }
}

impl MemoryPolicy for Prs {
    fn step(
        &mut self,
        memory: &mut ReplayMemory,
        stats: &RunningStats,
        example: LabeledExample,
        rng: &mut Rng,
    ) -> Result<StepOutcome> {
        prs_step(memory, stats, example, self.rho, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::types::MultiHotLabel;
    use proptest::prelude::*;

    fn stats_of(counts: &[u64]) -> RunningStats {
        let mut s = RunningStats::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                s.update(&MultiHotLabel::new([c]));
            }
        }
        s
    }

    fn memory_of(cap: usize, labels: &[&[ClassId]]) -> ReplayMemory {
        let mut m = ReplayMemory::new(cap);
        for (id, l) in labels.iter().enumerate() {
            m.insert(LabeledExample::new(
                id as SampleId,
                vec![],
                MultiHotLabel::new(l.iter().copied()),
            ))
            .unwrap();
        }
        m
    }

    fn partition_of(ratios: &[f64], m: usize) -> TargetPartition {
        TargetPartition {
            rho: 0.0,
            ratios: ratios.to_vec(),
            quotas: ratios.iter().map(|p| p * m as f64).collect(),
        }
    }

    #[test]
    fn rho_zero_is_uniform() {
        let p = compute_partition(&stats_of(&[1, 7, 300, 2]), 0.0, 100).unwrap();
        assert_eq!(p.ratios, vec![0.25; 4]);
        assert_eq!(p.quotas, vec![25.0; 4]);
    }

    #[test]
    fn rho_one_is_proportional() {
        let p = compute_partition(&stats_of(&[30, 10]), 1.0, 8).unwrap();
        assert!((p.ratios[0] - 0.75).abs() < 1e-12);
        assert!((p.ratios[1] - 0.25).abs() < 1e-12);
        assert!((p.quotas[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rho_half() {
        let p = compute_partition(&stats_of(&[100, 10]), 0.5, 1).unwrap();
        // 10 / (10 + sqrt 10), computed independently
        let oracle = 10.0 / (10.0 + 10f64.sqrt());
        assert!((p.ratios[0] - oracle).abs() < 1e-12);
        assert!((p.ratios[0] - 0.7597).abs() < 1e-4);
        assert!((p.ratios[1] - 0.2403).abs() < 1e-4);
    }

    #[test]
    fn unobserved_classes_get_nothing_even_for_negative_rho() {
        let p = compute_partition(&stats_of(&[0, 5, 20]), -1.0, 10).unwrap();
        assert_eq!(p.ratios[0], 0.0);
        assert!((p.ratios[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn partition_errors() {
        assert!(matches!(
            compute_partition(&RunningStats::with_classes(3), 0.0, 10),
            Err(Error::EmptyStats)
        ));
        assert!(compute_partition(&stats_of(&[1]), f64::NAN, 10).is_err());
    }

    #[test]
    fn sample_in_single_class_reduces_to_crs() {
        let stats = stats_of(&[40]);
        let p = compute_partition(&stats, 0.3, 10).unwrap();
        let ex = LabeledExample::new(0, vec![], MultiHotLabel::new([0]));
        assert_eq!(sample_in_probability(&ex, &stats, &p).unwrap(), 10.0 / 40.0);
        let stats = stats_of(&[4]);
        assert_eq!(sample_in_probability(&ex, &stats, &p).unwrap(), 1.0);
    }

    #[test]
    fn sample_in_biases_towards_minority_without_underflow() {
        let stats = stats_of(&[1000, 2]);
        let p = partition_of(&[0.5, 0.5], 1000);
        let ex = LabeledExample::new(0, vec![], MultiHotLabel::new([0, 1]));
        // w = [e^-998, 1] / (1 + e^-998); s = 500/1000 * w0 + 500/2 * w1 > 1
        assert_eq!(sample_in_probability(&ex, &stats, &p).unwrap(), 1.0);
        let small = partition_of(&[0.5, 0.5], 2);
        let s = sample_in_probability(&ex, &stats, &small).unwrap();
        assert!((s - 0.5).abs() < 1e-12, "{s}");
    }

    #[test]
    fn sample_in_equal_counts() {
        let stats = stats_of(&[10, 10]);
        let p = partition_of(&[0.5, 0.5], 10);
        let ex = LabeledExample::new(0, vec![], MultiHotLabel::new([0, 1]));
        assert_eq!(sample_in_probability(&ex, &stats, &p).unwrap(), 0.5);
    }

    #[test]
    fn sample_in_errors() {
        let stats = stats_of(&[3]);
        let p = partition_of(&[1.0], 1);
        let empty = LabeledExample::new(9, vec![], MultiHotLabel::default());
        assert!(matches!(sample_in_probability(&empty, &stats, &p), Err(Error::EmptyLabel(9))));
        let unseen = LabeledExample::new(9, vec![], MultiHotLabel::new([2]));
        assert!(matches!(
            sample_in_probability(&unseen, &stats, &p),
            Err(Error::UnobservedClass(2))
        ));
    }

    #[test]
    fn delta_examples() {
        let p = partition_of(&[0.5, 0.5], 10);
        let cases: [(&[&[ClassId]], [f64; 2]); 3] = [
            (&[&[0], &[0], &[0], &[0], &[0], &[1], &[1], &[1], &[1], &[1]], [0.0, 0.0]),
            (&[&[0], &[0], &[0], &[0], &[0], &[0], &[1], &[1], &[1], &[1]], [1.0, -1.0]),
            (&[&[0][..]; 10], [5.0, -5.0]),
        ];
        for (labels, expected) in cases {
            let d = delta_vector(&memory_of(10, labels), &p);
            assert_eq!(d.values, expected.to_vec());
        }
    }

    #[test]
    fn delta_uses_label_total_not_capacity() {
        // 2 samples, 3 label occurrences
        let m = memory_of(10, &[&[0, 1], &[0]]);
        let d = delta_vector(&m, &partition_of(&[0.5, 0.5], 10));
        assert_eq!(d.values, vec![0.5, -0.5]);
    }

    #[test]
    fn select_out_single_positive() {
        let d = DeltaVector { values: vec![1.0, -1.0] };
        let mut rng = seeded_rng(0);
        for _ in 0..100 {
            assert_eq!(select_out_class(&d, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn select_out_no_positive() {
        let d = DeltaVector { values: vec![0.0, 0.0] };
        assert!(matches!(
            select_out_class(&d, &mut seeded_rng(0)),
            Err(Error::NoOverOccupiedClass)
        ));
    }

    fn empirical(d: &DeltaVector, draws: usize) -> Vec<f64> {
        let mut rng = seeded_rng(42);
        let mut hits = vec![0usize; d.values.len()];
        for _ in 0..draws {
            hits[select_out_class(d, &mut rng).unwrap()] += 1;
        }
        hits.iter().map(|&h| h as f64 / draws as f64).collect()
    }

    #[test]
    fn select_out_symmetric() {
        let f = empirical(&DeltaVector { values: vec![2.0, 2.0, -4.0] }, 10_000);
        let sd = (0.25f64 / 10_000.0).sqrt();
        assert!((f[0] - 0.5).abs() < 4.0 * sd);
        assert_eq!(f[2], 0.0);
    }

    #[test]
    fn select_out_softmax_frequencies() {
        let n = 10_000;
        let f = empirical(&DeltaVector { values: vec![3.0, 1.0, -4.0] }, n);
        let e2 = 2f64.exp();
        let p0 = e2 / (e2 + 1.0);
        assert!((p0 - 0.881).abs() < 1e-3);
        let sd = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((f[0] - p0).abs() < 4.0 * sd, "{f:?}");
        assert_eq!(f[2], 0.0);
    }

    // Literal reading of the candidate rule: argmax over Y of (not y) . q.
    fn candidate_oracle(m: &ReplayMemory, over: ClassId, delta: &[f64]) -> Vec<SampleId> {
        let u = delta.len();
        let q: Vec<u32> = delta.iter().map(|&d| u32::from(d <= 0.0)).collect();
        let ys: Vec<(SampleId, u32)> = m
            .sorted_ids()
            .into_iter()
            .filter(|&id| m.get(id).unwrap().label.contains(over))
            .map(|id| {
                let bits = m.get(id).unwrap().label.to_dense(u);
                let dot = (0..u).map(|i| u32::from(!bits[i]) * q[i]).sum();
                (id, dot)
            })
            .collect();
        let best = ys.iter().map(|&(_, d)| d).max().unwrap();
        ys.into_iter().filter(|&(_, d)| d == best).map(|(id, _)| id).collect()
    }

    #[test]
    fn candidate_prefers_fewest_satisfied_classes() {
        // A=0, B=1, C=2
        let m = memory_of(3, &[&[0], &[0, 1], &[0, 2]]);
        let d = DeltaVector { values: vec![1.0, -0.5, -0.5] };
        assert_eq!(candidate_set(&m, 0, &d).unwrap(), vec![0]);
        assert_eq!(candidate_oracle(&m, 0, &d.values), vec![0]);
    }

    #[test]
    fn candidate_all_single_labeled_tie() {
        let m = memory_of(4, &[&[0], &[0], &[1], &[0]]);
        let d = DeltaVector { values: vec![1.0, -1.0] };
        assert_eq!(candidate_set(&m, 0, &d).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn candidate_ignores_other_over_occupied_classes() {
        let m = memory_of(2, &[&[0, 1], &[0, 2]]);
        let d = DeltaVector { values: vec![1.0, 0.5, -1.5] };
        assert_eq!(candidate_set(&m, 0, &d).unwrap(), vec![0]);
        assert_eq!(candidate_oracle(&m, 0, &d.values), vec![0]);
    }

    #[test]
    fn candidate_empty_class() {
        let m = memory_of(2, &[&[0]]);
        let d = DeltaVector { values: vec![0.0, 1.0] };
        assert!(matches!(candidate_set(&m, 1, &d), Err(Error::EmptyCandidateSet(1))));
    }

    #[test]
    fn removal_single_candidate() {
        let m = memory_of(3, &[&[0], &[1], &[0, 1]]);
        let p = partition_of(&[0.5, 0.5], 3);
        assert_eq!(select_removal(&m, &[2], &p, &mut seeded_rng(0)), 2);
    }

    #[test]
    fn removal_worked_example() {
        // l = [3, 1]: ids 0, 1 labeled {0}; id 2 labeled {0, 1}
        let m = memory_of(3, &[&[0], &[0], &[0, 1]]);
        let p = partition_of(&[0.5, 0.5], 3);
        assert_eq!(removal_distance(&m, 0, &p), 1.0);
        assert_eq!(removal_distance(&m, 2, &p), 2.0);
        assert_eq!(select_removal(&m, &[0, 2], &p, &mut seeded_rng(0)), 0);
    }

    #[test]
    fn removal_ties_are_random_members() {
        let m = memory_of(4, &[&[0], &[0], &[0], &[1]]);
        let p = partition_of(&[0.5, 0.5], 4);
        let mut rng = seeded_rng(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(select_removal(&m, &[0, 1, 2], &p, &mut rng));
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    fn stream(labels: &[Vec<ClassId>]) -> Vec<LabeledExample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledExample::new(i as SampleId, vec![], MultiHotLabel::new(l.clone())))
            .collect()
    }

    fn run_prs(examples: &[LabeledExample], m: usize, rho: f64, seed: u64) -> (ReplayMemory, Vec<StepOutcome>) {
        let mut mem = ReplayMemory::new(m);
        let mut stats = RunningStats::new();
        let mut rng = seeded_rng(seed);
        let mut out = Vec::new();
        for (t, ex) in examples.iter().enumerate() {
            stats.update(&ex.label);
            out.push(prs_step(&mut mem, &stats, ex.clone(), rho, &mut rng).unwrap());
            assert_eq!(mem.len(), (t + 1).min(m));
        }
        (mem, out)
    }

    #[test]
    fn fill_phase_keeps_prefix() {
        let ex = stream(&(0..30).map(|i| vec![i % 4]).collect::<Vec<_>>());
        let (mem, out) = run_prs(&ex[..12], 12, 0.0, 0);
        assert_eq!(mem.sorted_ids(), (0..12).collect::<Vec<_>>());
        assert!(out.iter().all(|o| *o == StepOutcome::Fill));
    }

    #[test]
    fn zero_capacity_rejects() {
        let ex = stream(&[vec![0], vec![1]]);
        let (mem, out) = run_prs(&ex, 0, 0.0, 0);
        assert!(mem.is_empty());
        assert!(matches!(out[1], StepOutcome::Reject { .. }));
    }

    #[test]
    fn balances_two_class_stream() {
        use rand::seq::SliceRandom;
        for seed in 0..5 {
            let mut labels: Vec<Vec<ClassId>> =
                (0..2000).map(|i| vec![usize::from(i % 10 == 0)]).collect();
            labels.shuffle(&mut seeded_rng(1000 + seed));
            let (mem, _) = run_prs(&stream(&labels), 100, 0.0, seed);
            let total = mem.total_label_count() as f64;
            let l1: f64 = (0..2).map(|c| (mem.class_count(c) as f64 / total - 0.5).abs()).sum();
            assert!(l1 <= 0.2, "seed {seed}: l1 = {l1}, counts {:?}", mem.class_counts());
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let labels: Vec<Vec<ClassId>> = (0..500).map(|i| vec![i % 7, (i * 3) % 5]).collect();
        let ex = stream(&labels);
        let (a, oa) = run_prs(&ex, 20, 0.2, 9);
        let (b, ob) = run_prs(&ex, 20, 0.2, 9);
        assert_eq!(oa, ob);
        assert_eq!(a.snapshot(false), b.snapshot(false));
    }

    proptest! {
        #[test]
        fn partition_and_delta_invariants(
            counts in prop::collection::vec(0u64..500, 1..12),
            rho in -1.0f64..1.0,
            m in 1usize..3000,
        ) {
            prop_assume!(counts.iter().any(|&n| n > 0));
            let stats = stats_of(&counts);
            let p = compute_partition(&stats, rho, m).unwrap();
            prop_assert!((p.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((p.quotas.iter().sum::<f64>() - m as f64).abs() < 1e-6);
            prop_assert!(p.ratios.iter().all(|&r| r >= 0.0));

            let labels: Vec<&[ClassId]> = Vec::new();
            let mut mem = memory_of(64, &labels);
            let mut id = 0;
            for (c, &n) in counts.iter().enumerate() {
                for _ in 0..(n % 5) {
                    mem.insert(LabeledExample::new(id, vec![], MultiHotLabel::new([c]))).unwrap();
                    id += 1;
                }
            }
            prop_assume!(!mem.is_empty());
            let d = delta_vector(&mem, &p);
            prop_assert!(d.values.iter().sum::<f64>().abs() < 1e-6);
            if let Ok(c) = select_out_class(&d, &mut seeded_rng(id)) {
                prop_assert!(d.values[c] > 0.0);
            }
        }

        #[test]
        fn candidate_set_matches_oracle(
            labels in prop::collection::vec(prop::collection::btree_set(0usize..5, 1..4), 1..10),
            delta in prop::collection::vec(-2.0f64..2.0, 5),
            over in 0usize..5,
        ) {
            let labels: Vec<Vec<ClassId>> = labels.into_iter().map(|s| s.into_iter().collect()).collect();
            let refs: Vec<&[ClassId]> = labels.iter().map(|l| l.as_slice()).collect();
            let m = memory_of(10, &refs);
            prop_assume!(m.class_count(over) > 0);
            let d = DeltaVector { values: delta };
            prop_assert_eq!(candidate_set(&m, over, &d).unwrap(), candidate_oracle(&m, over, &d.values));
        }

        #[test]
        fn single_class_stream_probability_is_m_over_n(n in 1u64..5000, m in 1usize..3000, rho in -1.0f64..1.0) {
            let mut stats = RunningStats::new();
            let l = MultiHotLabel::new([0]);
            for _ in 0..n {
                stats.update(&l);
            }
            let p = compute_partition(&stats, rho, m).unwrap();
            let ex = LabeledExample::new(0, vec![], l);
            let s = sample_in_probability(&ex, &stats, &p).unwrap();
            prop_assert_eq!(s, (m as f64 / n as f64).min(1.0));
        }
    }
}
