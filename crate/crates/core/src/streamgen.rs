//! Synthetic long-tailed streams with sequential, mutually exclusive tasks.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, LabeledExample, MultiHotLabel, SampleId};
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub num_classes: usize,
    /// Pareto power; smaller is more long-tailed.
    pub alpha: f64,
    /// Size of class 0, the largest class.
    pub n_max: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Task schedule; empty means consecutive class pairs.
    #[serde(default)]
    pub tasks: Vec<Vec<ClassId>>,
    /// `cooccurrence[a][b]`: probability that an example of primary class `a`
    /// also carries `b`. Empty means single-labeled.
    #[serde(default)]
    pub cooccurrence: Vec<Vec<f64>>,
    pub seed: u64,
}

impl StreamConfig {
    /// Single-labeled config with the default task schedule.
    pub fn single_label(num_classes: usize, alpha: f64, n_max: usize, seed: u64) -> Self {
        StreamConfig {
            num_classes,
            alpha,
            n_max,
            feature_dim: 16,
            noise_sigma: 0.1,
            tasks: Vec::new(),
            cooccurrence: Vec::new(),
            seed,
        }
    }

    /// Tasks in schedule order, filling in the consecutive-pairs default.
    pub fn task_schedule(&self) -> Vec<Vec<ClassId>> {
        if self.tasks.is_empty() {
            (0..self.num_classes)
                .collect::<Vec<_>>()
                .chunks(2)
                .map(<[_]>::to_vec)
                .collect()
        } else {
            self.tasks.clone()
        }
    }

    /// Fills every within-task off-diagonal co-occurrence entry with `prob`.
    pub fn with_within_task_cooccurrence(mut self, prob: f64) -> Self {
        let c = self.num_classes;
        let mut m = vec![vec![0.0; c]; c];
        for task in self.task_schedule() {
            for &a in &task {
                for &b in &task {
                    if a != b && a < c && b < c {
                        m[a][b] = prob;
                    }
                }
            }
        }
        self.cooccurrence = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be a positive finite number"));
        }
        if self.n_max == 0 {
            return Err(Error::config("n_max", "must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        let mut owner = vec![None; self.num_classes];
        for (t, task) in self.task_schedule().iter().enumerate() {
            if task.is_empty() {
                return Err(Error::config("tasks", format!("task {t} is empty")));
            }
            for &c in task {
                if c >= self.num_classes {
                    return Err(Error::config(
                        "tasks",
                        format!("class {c} in task {t} is outside 0..{}", self.num_classes),
                    ));
                }
                if let Some(prev) = owner[c].replace(t) {
                    return Err(Error::config(
                        "tasks",
                        format!("class {c} appears in tasks {prev} and {t}; task sets must not overlap"),
                    ));
                }
            }
        }
        if !self.cooccurrence.is_empty() {
            let c = self.num_classes;
            if self.cooccurrence.len() != c || self.cooccurrence.iter().any(|r| r.len() != c) {
                return Err(Error::config("cooccurrence", format!("must be a {c}x{c} matrix")));
            }
            for (a, row) in self.cooccurrence.iter().enumerate() {
                for (b, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::config(
                            "cooccurrence",
                            format!("entry ({a}, {b}) = {p} is outside [0, 1]"),
                        ));
                    }
                    if a == b && p != 0.0 {
                        return Err(Error::config("cooccurrence", "diagonal must be zero"));
                    }
                }
            }
        }
        Ok(())
    }

    fn cooc(&self, a: ClassId, b: ClassId) -> f64 {
        self.cooccurrence
            .get(a)
            .and_then(|r| r.get(b))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Long-tailed class sizes `round(n_max * (i + 1)^(-1 / alpha))`, at least 1.
pub fn pareto_class_sizes(num_classes: usize, alpha: f64, n_max: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|i| {
            let size = (n_max as f64 * ((i + 1) as f64).powf(-1.0 / alpha)).round();
            (size as usize).max(1)
        })
        .collect()
}

/// Deterministic unit-norm class prototypes drawn from the config seed.
pub fn prototypes(config: &StreamConfig) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(config.seed);
    draw_prototypes(config, &mut rng)
}

fn draw_prototypes(config: &StreamConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..config.num_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..config.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect()
}

struct Sampler<'a> {
    config: &'a StreamConfig,
    protos: Vec<Vec<f64>>,
    next_id: SampleId,
}

impl Sampler<'_> {
    fn example(&mut self, primary: ClassId, task: usize, task_classes: &[ClassId], rng: &mut Rng) -> LabeledExample {
        let mut classes = vec![primary];
        for &other in task_classes {
            if other != primary {
                let p = self.config.cooc(primary, other);
                if p > 0.0 && rng.random::<f64>() < p {
                    classes.push(other);
                }
            }
        }
        let label = MultiHotLabel::new(classes);
        let k = label.cardinality() as f64;
        let features = (0..self.config.feature_dim)
            .map(|d| {
                let mean: f64 = label.iter().map(|c| self.protos[c][d]).sum::<f64>() / k;
                mean + self.config.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let id = self.next_id;
        self.next_id += 1;
        LabeledExample::new(id, features, label).with_task(task)
    }
}

/// Generates the training stream: tasks in schedule order, each task's
/// examples shuffled, primary classes materialized per [`pareto_class_sizes`].
pub fn gen_stream(config: &StreamConfig) -> Result<Vec<LabeledExample>> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let protos = draw_prototypes(config, &mut rng);
    let sizes = pareto_class_sizes(config.num_classes, config.alpha, config.n_max);
    let mut sampler = Sampler {
        config,
        protos,
        next_id: 0,
    };
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (t, task) in config.task_schedule().iter().enumerate() {
        let mut primaries: Vec<ClassId> = task
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, sizes[c]))
            .collect();
        primaries.shuffle(&mut rng);
        for c in primaries {
            out.push(sampler.example(c, t, task, &mut rng));
        }
    }
    Ok(out)
}

/// Held-out set with `per_class` examples of every scheduled primary class,
/// drawn around the same prototypes as the training stream.
pub fn gen_balanced_test(config: &StreamConfig, per_class: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    config.validate()?;
    let mut sampler = Sampler {
        config,
        protos: prototypes(config),
        next_id: 0,
    };
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for (t, task) in config.task_schedule().iter().enumerate() {
        for &c in task {
            for _ in 0..per_class {
                out.push(sampler.example(c, t, task, &mut rng));
            }
        }
    }
    Ok(out)
}

/// Label occurrences per class.
pub fn label_counts(examples: &[LabeledExample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for e in examples {
        for c in e.label.iter() {
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
    }
    counts
}
