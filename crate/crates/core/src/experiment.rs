//! Online continual-learning episodes with a replay memory.
//!
//! The stream is consumed in input batches; each step draws a replay batch
//! from the memory, takes one optimizer step on both, then feeds the input
//! examples through the memory policy. Metrics on a held-out set are logged
//! after every task.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::crs::Crs;
use crate::curation::{tier_split, Tier, TierThresholds};
use crate::error::{Error, Result};
use crate::learner::{AdamConfig, LinearModel, MlpModel};
use crate::memory::{MemorySnapshot, ReplayMemory};
use crate::metrics::{
    aggregate, gradient_variance_trace, memory_distribution_distance, normalized_forgetting,
    per_class_metrics, PerformanceMatrix,
};
use crate::policy::{MemoryPolicy, StepOutcome};
use crate::prs::{compute_partition, Prs};
use crate::stats::RunningStats;
use crate::streamgen::label_counts;
use crate::types::{ClassId, LabeledExample, SampleId};
use crate::{seeded_stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain online training, no memory.
    Finetune,
    Crs,
    Prs,
    /// One i.i.d. epoch over the shuffled stream; an upper reference.
    Multitask,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Crs => "crs",
            Method::Prs => "prs",
            Method::Multitask => "multitask",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Method::Crs | Method::Prs)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Method::Finetune),
            "crs" => Ok(Method::Crs),
            "prs" => Ok(Method::Prs),
            "multitask" => Ok(Method::Multitask),
            other => Err(Error::config(
                "method",
                format!("unknown method {other:?}; expected finetune, crs, prs or multitask"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub rho: f64,
    pub memory_size: usize,
    pub batch_size: usize,
    pub replay_batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub threshold: f64,
    /// Hidden width of the one-hidden-layer model; `None` for linear.
    pub hidden: Option<usize>,
    pub adam: AdamConfig,
    pub tiers: TierThresholds,
    /// Record one trace row per memory step.
    pub trace: bool,
    /// Keep features in memory snapshots.
    pub snapshot_features: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Prs,
            rho: 0.0,
            memory_size: 2000,
            batch_size: 10,
            replay_batch: 10,
            lr: 1e-3,
            seed: 0,
            threshold: 0.5,
            hidden: None,
            adam: AdamConfig::default(),
            tiers: TierThresholds::default(),
            trace: false,
            snapshot_features: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        if !self.rho.is_finite() {
            return Err(Error::config("rho", "must be finite"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must be in (0, 1)"));
        }
        if self.hidden == Some(0) {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        Ok(())
    }

    fn policy(&self) -> Option<Box<dyn MemoryPolicy>> {
        match self.method {
            Method::Crs => Some(Box::new(Crs)),
            Method::Prs => Some(Box::new(Prs { rho: self.rho })),
            Method::Finetune | Method::Multitask => None,
        }
    }

    /// Power of allocation whose target the memory is compared against.
    fn target_rho(&self) -> f64 {
        match self.method {
            Method::Prs => self.rho,
            _ => 1.0,
        }
    }
}

/// One `(checkpoint, task, tier, metric, value)` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub checkpoint: usize,
    /// `None` for rows over all classes.
    pub task: Option<usize>,
    /// `None` for the overall row.
    pub tier: Option<Tier>,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub event: &'static str,
    pub victim_id: Option<SampleId>,
    pub probability: Option<f64>,
    pub over_class: Option<ClassId>,
}

impl TraceRow {
    fn new(t: u64, outcome: &StepOutcome) -> Self {
        let (victim_id, probability, over_class) = match *outcome {
            StepOutcome::Fill => (None, None, None),
            StepOutcome::Admit {
                victim,
                probability,
                over_class,
            } => (Some(victim), Some(probability), over_class),
            StepOutcome::Reject { probability } => (None, Some(probability), None),
        };
        TraceRow {
            t,
            event: outcome.event_name(),
            victim_id,
            probability,
            over_class,
        }
    }
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub config: ExperimentConfig,
    pub rows: Vec<LogRow>,
    /// Per-task C-F1 after each checkpoint.
    pub performance: PerformanceMatrix,
    /// Task ids in schedule order; column `j` of `performance` is `tasks[j]`.
    pub tasks: Vec<usize>,
    pub tiers: Vec<Tier>,
    pub input_label_counts: Vec<usize>,
    pub snapshots: Vec<MemorySnapshot>,
    pub trace: Vec<TraceRow>,
    pub losses: Vec<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl EpisodeLog {
    /// Value of `metric` at `checkpoint` for the given task/tier selector.
    pub fn value(&self, checkpoint: usize, task: Option<usize>, tier: Option<Tier>, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.checkpoint == checkpoint && r.task == task && r.tier == tier && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn last_checkpoint(&self) -> usize {
        self.performance.num_checkpoints().saturating_sub(1)
    }

    /// Value of `metric` at the final checkpoint over all tasks.
    pub fn final_value(&self, tier: Option<Tier>, metric: &str) -> Option<f64> {
        self.value(self.last_checkpoint(), None, tier, metric)
    }

    /// Rows as CSV with header `checkpoint,task,tier,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("checkpoint,task,tier,metric,value\n");
        for r in &self.rows {
            let task = r.task.map_or_else(|| "all".to_string(), |t| t.to_string());
            let tier = r.tier.map_or("overall", Tier::name);
            writeln!(s, "{},{},{},{},{}", r.checkpoint, task, tier, r.metric, r.value).unwrap();
        }
        s
    }

    /// Trace as CSV with header `t,event,victim_id,s,over_class`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("t,event,victim_id,s,over_class\n");
        for r in &self.trace {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.t,
                r.event,
                opt(r.victim_id),
                opt(r.probability),
                opt(r.over_class)
            )
            .unwrap();
        }
        s
    }

    /// Final memory class shares, or `None` when no memory was kept.
    pub fn final_memory_shares(&self) -> Option<Vec<f64>> {
        let snap = self.snapshots.last()?;
        shares(&snap.class_counts)
    }
}

/// Normalizes counts to sum 1; `None` if they are all zero.
pub fn shares(counts: &[usize]) -> Option<Vec<f64>> {
    let total: usize = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

enum AnyModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl AnyModel {
    fn train_step(&mut self, input: &[LabeledExample], replay: &[LabeledExample], lr: f64) -> Result<f64> {
        match self {
            AnyModel::Linear(m) => m.train_step(input, replay, lr),
            AnyModel::Mlp(m) => m.train_step(input, replay, lr),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            AnyModel::Linear(m) => m.predict(x),
            AnyModel::Mlp(m) => m.predict(x),
        }
    }

    fn gradient(&self, ex: &LabeledExample) -> Result<Vec<f64>> {
        match self {
            AnyModel::Linear(m) => Ok(m.loss_and_grad(&[ex])?.1),
            AnyModel::Mlp(m) => Ok(m.loss_and_grad(&[ex])?.1),
        }
    }
}

/// Uniform replay batch: without replacement when the memory holds at least
/// `size` samples, with replacement otherwise.
pub fn draw_replay(memory: &ReplayMemory, size: usize, rng: &mut Rng) -> Vec<LabeledExample> {
    let n = memory.len();
    if n == 0 || size == 0 {
        return Vec::new();
    }
    if n >= size {
        rand::seq::index::sample(rng, n, size)
            .into_iter()
            .map(|slot| memory.at_slot(slot).clone())
            .collect()
    } else {
        (0..size)
            .map(|_| memory.at_slot(rng.random_range(0..n)).clone())
            .collect()
    }
}

/// Contiguous runs of equal `task` values; examples without a task form task 0.
fn task_segments(stream: &[LabeledExample]) -> Vec<(usize, &[LabeledExample])> {
    let mut out: Vec<(usize, &[LabeledExample])> = Vec::new();
    let mut start = 0;
    for i in 1..=stream.len() {
        let boundary = i == stream.len() || stream[i].task.unwrap_or(0) != stream[start].task.unwrap_or(0);
        if boundary {
            out.push((stream[start].task.unwrap_or(0), &stream[start..i]));
            start = i;
        }
    }
    out
}

/// Runs the memory policy alone over `stream`, without any learner.
pub fn simulate_memory(
    stream: &[LabeledExample],
    method: Method,
    rho: f64,
    memory_size: usize,
    seed: u64,
) -> Result<(ReplayMemory, RunningStats)> {
    let config = ExperimentConfig {
        method,
        rho,
        ..ExperimentConfig::default()
    };
    let mut memory = ReplayMemory::new(memory_size);
    let mut stats = RunningStats::new();
    let mut rng = seeded_stream(seed, 0);
    if let Some(mut policy) = config.policy() {
        for ex in stream {
            stats.update(&ex.label);
            policy.step(&mut memory, &stats, ex.clone(), &mut rng)?;
        }
    }
    Ok((memory, stats))
}

struct Evaluator<'a> {
    test: &'a [LabeledExample],
    num_classes: usize,
    labels: Vec<Vec<bool>>,
    threshold: f64,
    stream_classes: Vec<ClassId>,
    task_classes: BTreeMap<usize, Vec<ClassId>>,
    tiers: Vec<Tier>,
}

impl Evaluator<'_> {
    fn scores(&self, model: &AnyModel) -> Result<Vec<Vec<f64>>> {
        self.test
            .iter()
            .map(|e| {
                let mut s = model.predict(&e.features)?;
                s.resize(self.num_classes, 0.0);
                Ok(s)
            })
            .collect()
    }

    fn evaluate(&self, model: &AnyModel, checkpoint: usize, tasks: &[usize], rows: &mut Vec<LogRow>) -> Result<Vec<f64>> {
        let scores = self.scores(model)?;
        let per_class = per_class_metrics(&scores, &self.labels, self.threshold)?;
        let mut push = |task, tier, report: crate::metrics::MultilabelReport| {
            for (name, value) in report.named() {
                rows.push(LogRow {
                    checkpoint,
                    task,
                    tier,
                    metric: name.to_string(),
                    value,
                });
            }
        };
        for tier in Tier::ALL {
            let classes: Vec<ClassId> = self
                .stream_classes
                .iter()
                .copied()
                .filter(|&c| self.tiers[c] == tier)
                .collect();
            if !classes.is_empty() {
                push(None, Some(tier), aggregate(&per_class, &classes));
            }
        }
        push(None, None, aggregate(&per_class, &self.stream_classes));

        let mut task_f1 = Vec::with_capacity(tasks.len());
        for &task in tasks {
            let classes = &self.task_classes[&task];
            let idx: Vec<usize> = (0..self.test.len())
                .filter(|&i| classes.iter().any(|&c| self.labels[i][c]))
                .collect();
            if idx.is_empty() {
                task_f1.push(0.0);
                continue;
            }
            let s: Vec<Vec<f64>> = idx.iter().map(|&i| scores[i].clone()).collect();
            let l: Vec<Vec<bool>> = idx.iter().map(|&i| self.labels[i].clone()).collect();
            let report = aggregate(&per_class_metrics(&s, &l, self.threshold)?, classes);
            task_f1.push(report.c_f1);
            push(Some(task), None, report);
        }
        Ok(task_f1)
    }
}

/// Runs one episode of `config.method` over `stream`, evaluating on `test`.
pub fn run_experiment(stream: &[LabeledExample], test: &[LabeledExample], config: &ExperimentConfig) -> Result<EpisodeLog> {
    config.validate()?;
    let first = stream.first().ok_or(Error::EmptyInput("training stream is empty"))?;
    if test.is_empty() {
        return Err(Error::EmptyInput("test set is empty"));
    }
    let dim = first.features.len();
    for ex in stream.iter().chain(test) {
        ex.validate()?;
        if ex.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: ex.features.len(),
            });
        }
    }

    let mut policy_rng = seeded_stream(config.seed, 0);
    let mut replay_rng = seeded_stream(config.seed, 1);
    let mut shuffle_rng = seeded_stream(config.seed, 2);

    let universe = stream
        .iter()
        .chain(test)
        .map(|e| e.label.universe_hint())
        .max()
        .unwrap_or(0);
    let input_label_counts = label_counts(stream, universe);
    let tiers = tier_split(&input_label_counts, config.tiers);
    let stream_classes: Vec<ClassId> = (0..universe).filter(|&c| input_label_counts[c] > 0).collect();

    let segments = task_segments(stream);
    let mut task_classes: BTreeMap<usize, Vec<ClassId>> = BTreeMap::new();
    let mut task_order = Vec::new();
    for (task, seg) in &segments {
        let entry = task_classes.entry(*task).or_insert_with(|| {
            task_order.push(*task);
            Vec::new()
        });
        for ex in seg.iter() {
            entry.extend(ex.label.iter());
        }
        entry.sort_unstable();
        entry.dedup();
    }

    let evaluator = Evaluator {
        test,
        num_classes: universe,
        labels: test.iter().map(|e| e.label.to_dense(universe)).collect(),
        threshold: config.threshold,
        stream_classes,
        task_classes,
        tiers: tiers.clone(),
    };

    let mut model = match config.hidden {
        None => AnyModel::Linear(LinearModel::new(dim, 0, config.adam)),
        Some(h) => AnyModel::Mlp(MlpModel::new(dim, h, 0, config.adam, config.seed)),
    };
    let mut policy = config.policy();
    let mut memory = ReplayMemory::new(if policy.is_some() { config.memory_size } else { 0 });
    let mut stats = RunningStats::new();

    let mut log = EpisodeLog {
        config: config.clone(),
        rows: Vec::new(),
        performance: PerformanceMatrix::new("C-F1"),
        tasks: task_order.clone(),
        tiers,
        input_label_counts,
        snapshots: Vec::new(),
        trace: Vec::new(),
        losses: Vec::new(),
    };

    // Multitask trains once over the shuffled stream and is evaluated at the end.
    let shuffled;
    let phases: Vec<&[LabeledExample]> = if config.method == Method::Multitask {
        let mut all = stream.to_vec();
        all.shuffle(&mut shuffle_rng);
        shuffled = all;
        vec![&shuffled[..]]
    } else {
        segments.iter().map(|(_, s)| *s).collect()
    };

    let mut seen_tasks: Vec<usize> = Vec::new();
    let mut t = 0u64;
    for (checkpoint, phase) in phases.iter().enumerate() {
        for batch in phase.chunks(config.batch_size) {
            let replay = draw_replay(&memory, config.replay_batch, &mut replay_rng);
            log.losses.push(model.train_step(batch, &replay, config.lr)?);
            for ex in batch {
                t += 1;
                stats.update(&ex.label);
                if let Some(p) = policy.as_mut() {
                    let outcome = p.step(&mut memory, &stats, ex.clone(), &mut policy_rng)?;
                    if config.trace {
                        log.trace.push(TraceRow::new(t, &outcome));
                    }
                }
            }
        }

        if config.method == Method::Multitask {
            seen_tasks = task_order.clone();
        } else {
            let task = segments[checkpoint].0;
            if !seen_tasks.contains(&task) {
                seen_tasks.push(task);
            }
        }
        let task_f1 = evaluator.evaluate(&model, checkpoint, &seen_tasks, &mut log.rows)?;
        log.performance.push_checkpoint(task_f1);
        let k = log.performance.num_checkpoints();
        if k >= 2 && config.method != Method::Multitask {
            log.rows.push(LogRow {
                checkpoint,
                task: None,
                tier: None,
                metric: "forgetting".into(),
                value: normalized_forgetting(&log.performance, k),
            });
        }
        if policy.is_some() {
            if !memory.is_empty() {
                let mut ids = memory.sorted_ids();
                ids.truncate(2000);
                let grads = ids
                    .iter()
                    .map(|&id| model.gradient(memory.get(id).expect("stored")))
                    .collect::<Result<Vec<_>>>()?;
                log.rows.push(LogRow {
                    checkpoint,
                    task: None,
                    tier: None,
                    metric: "grad-var-trace".into(),
                    value: gradient_variance_trace(&grads)?,
                });
                let target = compute_partition(&stats, config.target_rho(), memory.capacity())?;
                log.rows.push(LogRow {
                    checkpoint,
                    task: None,
                    tier: None,
                    metric: "memory-l1-target".into(),
                    value: memory_distribution_distance(&memory, &target),
                });
            }
            log.snapshots.push(memory.snapshot(config.snapshot_features));
        }
    }
    Ok(log)
}
