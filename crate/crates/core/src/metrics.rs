//! Multi-label classification metrics, forgetting, memory-distribution
//! distance and gradient-variance diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::ReplayMemory;
use crate::prs::TargetPartition;
use crate::types::ClassId;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Confusion counts and average precision of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub support: u64,
    pub average_precision: f64,
}

impl ClassMetrics {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

/// The seven headline multi-label metrics.
///
/// `C-*` are macro averages over the evaluated classes that have at least one
/// positive label; `O-*` pool every (sample, class) pair of the evaluated
/// classes. Classes without positives are listed in `skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelReport {
    pub c_p: f64,
    pub c_r: f64,
    pub c_f1: f64,
    pub o_p: f64,
    pub o_r: f64,
    pub o_f1: f64,
    pub map: f64,
    pub skipped: Vec<ClassId>,
}

impl MultilabelReport {
    /// `(name, value)` pairs in reporting order.
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("C-P", self.c_p),
            ("C-R", self.c_r),
            ("C-F1", self.c_f1),
            ("O-P", self.o_p),
            ("O-R", self.o_r),
            ("O-F1", self.o_f1),
            ("mAP", self.map),
        ]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_shapes(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate"));
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let c = scores[0].len();
    for (s, l) in scores.iter().zip(labels) {
        if s.len() != c || l.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: if s.len() != c { s.len() } else { l.len() },
            });
        }
    }
    if c == 0 {
        return Err(Error::EmptyInput("no classes to evaluate"));
    }
    Ok(c)
}

/// Average precision of one ranking.
///
/// Precision is taken at each distinct score threshold, so every positive in
/// a block of tied scores is credited with the precision of the whole block:
/// tied negatives always count as ranked above it. Constant scores therefore
/// yield the class prevalence.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> f64 {
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block_pos = 0;
        while i < order.len() && scores[order[i]] == s {
            block_pos += usize::from(positives[order[i]]);
            seen += 1;
            i += 1;
        }
        if block_pos > 0 {
            tp += block_pos;
            ap += block_pos as f64 * (tp as f64 / seen as f64);
        }
    }
    ap / total_pos as f64
}

/// Per-class confusion counts and AP at `threshold` (`score >= threshold` is a positive prediction).
pub fn per_class_metrics(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
) -> Result<Vec<ClassMetrics>> {
    let c = check_shapes(scores, labels)?;
    let mut out = Vec::with_capacity(c);
    let mut column_s = vec![0.0; scores.len()];
    let mut column_l = vec![false; scores.len()];
    for class in 0..c {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (n, (s, l)) in scores.iter().zip(labels).enumerate() {
            let pred = s[class] >= threshold;
            match (pred, l[class]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            column_s[n] = s[class];
            column_l[n] = l[class];
        }
        out.push(ClassMetrics {
            tp,
            fp,
            fn_,
            support: tp + fn_,
            average_precision: average_precision(&column_s, &column_l),
        });
    }
    Ok(out)
}

/// Aggregates per-class results over `classes`.
pub fn aggregate(per_class: &[ClassMetrics], classes: &[ClassId]) -> MultilabelReport {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut cp, mut cr, mut cf1, mut map) = (0.0, 0.0, 0.0, 0.0);
    let mut present = 0usize;
    let mut skipped = Vec::new();
    for &c in classes {
        let m = &per_class[c];
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        if m.support == 0 {
            skipped.push(c);
            continue;
        }
        present += 1;
        cp += m.precision();
        cr += m.recall();
        cf1 += m.f1();
        map += m.average_precision;
    }
    let k = present.max(1) as f64;
    let o_p = ratio(tp, tp + fp);
    let o_r = ratio(tp, tp + fn_);
    MultilabelReport {
        c_p: cp / k,
        c_r: cr / k,
        c_f1: cf1 / k,
        o_p,
        o_r,
        o_f1: harmonic(o_p, o_r),
        map: map / k,
        skipped,
    }
}

/// C-P, C-R, C-F1, O-P, O-R, O-F1 and mAP over all classes.
pub fn multilabel_metrics(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
) -> Result<MultilabelReport> {
    let per_class = per_class_metrics(scores, labels, threshold)?;
    let all: Vec<ClassId> = (0..per_class.len()).collect();
    Ok(aggregate(&per_class, &all))
}

/// Metric values `values[k][j]` of task `j` measured after training through
/// task `k` (0-based, `j <= k`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub metric: String,
    pub values: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new(metric: impl Into<String>) -> Self {
        PerformanceMatrix {
            metric: metric.into(),
            values: Vec::new(),
        }
    }

    /// Appends the row measured after training one more task.
    pub fn push_checkpoint(&mut self, row: Vec<f64>) {
        self.values.push(row);
    }

    pub fn num_checkpoints(&self) -> usize {
        self.values.len()
    }
}

/// Normalized forgetting after `k` trained tasks (`k >= 2`).
///
/// For every earlier task `j`, the largest relative drop from any earlier
/// checkpoint to checkpoint `k - 1`; averaged over `j < k - 1`. Checkpoints
/// where the task scored exactly 0 are skipped, and a task that never scored
/// above 0 has forgetting 0.
pub fn normalized_forgetting(perf: &PerformanceMatrix, k: usize) -> f64 {
    forgetting_impl(perf, k, true)
}

/// Unnormalized forgetting: largest absolute drop, averaged over earlier tasks.
pub fn forgetting(perf: &PerformanceMatrix, k: usize) -> f64 {
    forgetting_impl(perf, k, false)
}

fn forgetting_impl(perf: &PerformanceMatrix, k: usize, normalize: bool) -> f64 {
    assert!(k >= 2, "forgetting needs at least two trained tasks");
    assert!(k <= perf.values.len(), "checkpoint {k} not recorded");
    let current = &perf.values[k - 1];
    let mut sum = 0.0;
    for j in 0..k - 1 {
        let mut best: Option<f64> = None;
        for l in j..k - 1 {
            let past = perf.values[l][j];
            let drop = if normalize {
                if past == 0.0 {
                    continue;
                }
                (past - current[j]) / past.abs()
            } else {
                past - current[j]
            };
            best = Some(best.map_or(drop, |b: f64| b.max(drop)));
        }
        sum += best.unwrap_or(0.0);
    }
    sum / (k - 1) as f64
}

/// L1 distance between the memory's normalized class histogram and `target`.
pub fn memory_distribution_distance(memory: &ReplayMemory, target: &TargetPartition) -> f64 {
    let total = memory.total_label_count() as f64;
    let len = memory.class_counts().len().max(target.num_classes());
    (0..len)
        .map(|c| {
            let share = if total > 0.0 {
                memory.class_count(c) as f64 / total
            } else {
                0.0
            };
            (share - target.ratio(c)).abs()
        })
        .sum()
}

/// L1 distance between two class-share vectors of possibly different length.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

/// Trace of the population covariance of `gradients`: the summed
/// per-coordinate variance, dividing by N.
pub fn gradient_variance_trace(gradients: &[Vec<f64>]) -> Result<f64> {
    let first = gradients
        .first()
        .ok_or(Error::EmptyInput("no gradient vectors"))?;
    let d = first.len();
    if let Some(bad) = gradients.iter().find(|g| g.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = gradients.len() as f64;
    let mut mean = vec![0.0; d];
    for g in gradients {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut trace = 0.0;
    for g in gradients {
        for (m, x) in mean.iter().zip(g) {
            trace += (x - m) * (x - m);
        }
    }
    Ok(trace / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LabeledExample, MultiHotLabel};

    #[test]
    fn perfect_predictor() {
        let labels = vec![vec![true, false, true], vec![false, true, false]];
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|r| r.iter().map(|&b| f64::from(u8::from(b))).collect())
            .collect();
        let r = multilabel_metrics(&scores, &labels, 0.5).unwrap();
        for (name, v) in r.named() {
            assert_eq!(v, 1.0, "{name}");
        }
    }

    #[test]
    fn worked_two_by_two() {
        let labels = vec![vec![true, false], vec![false, true]];
        let scores = vec![vec![0.9, 0.8], vec![0.1, 0.7]];
        let r = multilabel_metrics(&scores, &labels, 0.5).unwrap();
        assert!((r.o_p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.o_r, 1.0);
        assert!((r.o_f1 - 0.8).abs() < 1e-12);
        assert_eq!(r.c_p, 0.75);
        assert_eq!(r.c_r, 1.0);
        assert!((r.c_f1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let labels = vec![
            vec![true, false],
            vec![false, true],
            vec![true, true],
            vec![false, true],
        ];
        let scores = vec![vec![0.3; 2]; 4];
        let r = multilabel_metrics(&scores, &labels, 0.5).unwrap();
        assert!((r.map - (0.5 + 0.75) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tied_negatives_rank_before_positives() {
        // ranking: 0.9 (neg), then a tie of one pos and one neg
        let ap = average_precision(&[0.9, 0.5, 0.5], &[false, true, false]);
        assert!((ap - 1.0 / 3.0).abs() < 1e-12);
        let ap = average_precision(&[0.9, 0.5, 0.1], &[true, false, true]);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let labels = vec![vec![true, false], vec![true, false]];
        let scores = vec![vec![0.9, 0.9], vec![0.9, 0.1]];
        let r = multilabel_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(r.c_p, 1.0);
        assert!((r.o_p - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            multilabel_metrics(&[], &[], 0.5),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            multilabel_metrics(&[vec![0.1]], &[vec![true, false]], 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn perf(rows: &[&[f64]]) -> PerformanceMatrix {
        PerformanceMatrix {
            metric: "C-F1".into(),
            values: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn forgetting_hand_cases() {
        assert_eq!(normalized_forgetting(&perf(&[&[50.0], &[50.0, 30.0]]), 2), 0.0);
        assert_eq!(normalized_forgetting(&perf(&[&[50.0], &[40.0, 70.0]]), 2), 0.2);
        let f = normalized_forgetting(&perf(&[&[40.0], &[50.0, 10.0]]), 2);
        assert!(f < 0.0);
        assert_eq!(f, -0.25);
    }

    #[test]
    fn forgetting_three_tasks() {
        // task 0: [60, 30, 45] -> max((60-45)/60, (30-45)/30) = 0.25
        // task 1: [40, 10]     -> (40-10)/40 = 0.75
        let p = perf(&[&[60.0], &[30.0, 40.0], &[45.0, 10.0, 80.0]]);
        assert!((normalized_forgetting(&p, 3) - 0.5).abs() < 1e-12);
        assert_eq!(normalized_forgetting(&p, 2), 0.5);
    }

    #[test]
    fn forgetting_with_zero_history() {
        let p = perf(&[&[0.0], &[0.0, 1.0]]);
        assert_eq!(normalized_forgetting(&p, 2), 0.0);
    }

    #[test]
    fn normalized_matches_unnormalized_for_unit_history() {
        let p = perf(&[&[1.0], &[1.0, 1.0], &[0.4, 0.7, 0.5]]);
        assert!((normalized_forgetting(&p, 3) - forgetting(&p, 3)).abs() < 1e-15);
    }

    #[test]
    fn distribution_distance() {
        let mut m = ReplayMemory::new(10);
        for id in 0..10 {
            m.insert(LabeledExample::new(id, vec![], MultiHotLabel::new([0])))
                .unwrap();
        }
        let t = TargetPartition {
            rho: 0.0,
            ratios: vec![0.5, 0.5],
            quotas: vec![5.0, 5.0],
        };
        assert_eq!(memory_distribution_distance(&m, &t), 1.0);
        let exact = TargetPartition {
            rho: 1.0,
            ratios: vec![1.0],
            quotas: vec![10.0],
        };
        assert_eq!(memory_distribution_distance(&m, &exact), 0.0);
    }

    #[test]
    fn variance_trace_cases() {
        assert_eq!(gradient_variance_trace(&vec![vec![1.0, 2.0]; 5]).unwrap(), 0.0);
        assert_eq!(
            gradient_variance_trace(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
            1.0
        );
        assert!(matches!(
            gradient_variance_trace(&[vec![0.0], vec![0.0, 1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
