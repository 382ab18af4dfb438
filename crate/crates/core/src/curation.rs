//! Splitting a multi-label annotation corpus into mutually exclusive
//! sequential tasks.
//!
//! Classes are merged bottom-up into groups. At each round every pair of
//! groups is scored by `ln(co) - beta * (elem_j + elem_k)^2`, where `elem[g]`
//! counts images whose labels all fall inside `g` and `co` counts the images
//! that only become fully contained once the two groups are merged. Images
//! are then assigned to the single group containing all their labels; images
//! spanning several groups are dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Balance parameter that favors equally sized tasks.
pub const BETA_BALANCED: f64 = 1.0;
/// Weak balance parameter that keeps inter-task imbalance.
pub const BETA_WEAK: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub labels: BTreeSet<String>,
}

impl AnnotatedImage {
    pub fn new<S: Into<String>>(id: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        AnnotatedImage {
            id: id.into(),
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationCorpus {
    pub images: Vec<AnnotatedImage>,
    /// Sorted class names.
    pub class_vocab: Vec<String>,
}

impl AnnotationCorpus {
    /// Builds a corpus whose vocabulary is the sorted union of all labels.
    pub fn new(images: Vec<AnnotatedImage>) -> Result<Self> {
        for img in &images {
            if img.labels.is_empty() {
                return Err(Error::config("labels", format!("image {} has no labels", img.id)));
            }
        }
        let vocab: BTreeSet<&String> = images.iter().flat_map(|i| &i.labels).collect();
        let class_vocab = vocab.into_iter().cloned().collect();
        Ok(AnnotationCorpus { images, class_vocab })
    }

    /// Parses `{"id": str, "labels": [str]}` lines.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut images = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let img: AnnotatedImage = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            images.push(img);
        }
        Self::new(images)
    }

    fn class_index(&self) -> HashMap<&str, usize> {
        self.class_vocab
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect()
    }

    /// Distinct label sets as sorted class indices, with multiplicities.
    fn label_sets(&self) -> Vec<(Vec<usize>, u64)> {
        let index = self.class_index();
        let mut sets: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for img in &self.images {
            let mut s: Vec<usize> = img.labels.iter().map(|l| index[l.as_str()]).collect();
            s.sort_unstable();
            *sets.entry(s).or_default() += 1;
        }
        sets.into_iter().collect()
    }
}

/// Disjoint class-name groups, ordered by their first class in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSet {
    pub groups: Vec<Vec<String>>,
}

/// Merge score of two groups; `-inf` when merging gains no image.
pub fn merge_score(co: u64, elem_j: u64, elem_k: u64, beta: f64) -> f64 {
    if co == 0 {
        return f64::NEG_INFINITY;
    }
    let size = (elem_j + elem_k) as f64;
    (co as f64).ln() - beta * size * size
}

/// `elem` per group and `co` per unordered pair `(j, k)`, `j < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCounts {
    pub elem: Vec<u64>,
    pub co: BTreeMap<(usize, usize), u64>,
}

impl GroupCounts {
    pub fn co(&self, j: usize, k: usize) -> u64 {
        let key = if j < k { (j, k) } else { (k, j) };
        self.co.get(&key).copied().unwrap_or(0)
    }
}

/// Counts over the groups each image touches: one touched group feeds
/// `elem`, exactly two feed `co` of that pair.
fn group_counts(label_sets: &[(Vec<usize>, u64)], group_of: &[usize], ngroups: usize) -> GroupCounts {
    let mut elem = vec![0; ngroups];
    let mut co = BTreeMap::new();
    let mut touched = Vec::new();
    for (set, mult) in label_sets {
        touched.clear();
        touched.extend(set.iter().map(|&c| group_of[c]));
        touched.sort_unstable();
        touched.dedup();
        match touched[..] {
            [g] => elem[g] += mult,
            [a, b] => *co.entry((a, b)).or_insert(0) += mult,
            _ => {}
        }
    }
    GroupCounts { elem, co }
}

/// Highest-scoring pair `(j, k)`, `j < k`; ties go to the lexicographically
/// smallest pair. `restrict` limits the pairs to those containing that group.
fn best_pair(counts: &GroupCounts, ngroups: usize, beta: f64, restrict: Option<usize>) -> (usize, usize) {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..ngroups {
        for k in j + 1..ngroups {
            if restrict.is_some_and(|r| r != j && r != k) {
                continue;
            }
            let s = merge_score(counts.co(j, k), counts.elem[j], counts.elem[k], beta);
            if best.is_none() || s > best_score {
                best = Some((j, k));
                best_score = s;
            }
        }
    }
    best.expect("at least two groups")
}

/// Merges group `k` into group `j` (`j < k`), keeping groups ordered by
/// their smallest class index.
fn merge(groups: &mut Vec<Vec<usize>>, group_of: &mut [usize], j: usize, k: usize) {
    let moved = groups.remove(k);
    groups[j].extend(moved);
    groups[j].sort_unstable();
    for (g, members) in groups.iter().enumerate() {
        for &c in members {
            group_of[c] = g;
        }
    }
}

/// Agglomerative class grouping down to `ngroups` groups, followed by forced
/// merges of groups with fewer than `min_classes` classes.
///
/// Each forced merge joins the group with the fewest classes (lowest index on
/// ties) with its best-scoring partner, so the result can end up with fewer
/// than `ngroups` groups.
pub fn hierarchical_class_clustering(
    corpus: &AnnotationCorpus,
    ngroups: usize,
    beta: f64,
    min_classes: usize,
) -> Result<GroupSet> {
    let (groups, _) = cluster_with_trace(corpus, ngroups, beta, min_classes)?;
    Ok(groups)
}

/// Like [`hierarchical_class_clustering`], also returning the counts seen at
/// every merge round.
pub fn cluster_with_trace(
    corpus: &AnnotationCorpus,
    ngroups: usize,
    beta: f64,
    min_classes: usize,
) -> Result<(GroupSet, Vec<GroupCounts>)> {
    let c = corpus.class_vocab.len();
    if ngroups == 0 || ngroups > c {
        return Err(Error::Infeasible(format!(
            "ngroups = {ngroups} must be in 1..={c}"
        )));
    }
    if min_classes.saturating_mul(ngroups) > c {
        return Err(Error::Infeasible(format!(
            "{ngroups} groups of at least {min_classes} classes need more than {c} classes"
        )));
    }
    let sets = corpus.label_sets();
    let mut groups: Vec<Vec<usize>> = (0..c).map(|i| vec![i]).collect();
    let mut group_of: Vec<usize> = (0..c).collect();
    let mut trace = Vec::new();

    while groups.len() > ngroups {
        let counts = group_counts(&sets, &group_of, groups.len());
        let (j, k) = best_pair(&counts, groups.len(), beta, None);
        trace.push(counts);
        merge(&mut groups, &mut group_of, j, k);
    }
    while groups.len() > 1 {
        let Some(small) = (0..groups.len())
            .filter(|&g| groups[g].len() < min_classes)
            .min_by_key(|&g| (groups[g].len(), g))
        else {
            break;
        };
        let counts = group_counts(&sets, &group_of, groups.len());
        let (j, k) = best_pair(&counts, groups.len(), beta, Some(small));
        trace.push(counts);
        merge(&mut groups, &mut group_of, j, k);
    }

    let names = groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| corpus.class_vocab[i].clone()).collect())
        .collect();
    Ok((GroupSet { groups: names }, trace))
}

/// Per-task image lists plus the images no single group contains.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAssignment {
    pub tasks: Vec<Vec<AnnotatedImage>>,
    pub dropped: Vec<String>,
}

/// Assigns every image to the group that contains all of its labels.
pub fn assign_tasks(corpus: &AnnotationCorpus, groups: &GroupSet) -> TaskAssignment {
    let owner: HashMap<&str, usize> = groups
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |c| (c.as_str(), g)))
        .collect();
    let mut tasks = vec![Vec::new(); groups.groups.len()];
    let mut dropped = Vec::new();
    for img in &corpus.images {
        let mut owners = img.labels.iter().map(|l| owner.get(l.as_str()).copied());
        let first = owners.next().flatten();
        match first {
            Some(g) if owners.all(|o| o == Some(g)) => tasks[g].push(img.clone()),
            _ => dropped.push(img.id.clone()),
        }
    }
    TaskAssignment { tasks, dropped }
}

/// Splits one task's images into `(train, test)` so that every class is
/// covered by at least `k_per_class` test images.
///
/// Classes are visited from the rarest up; for each, seed-shuffled images are
/// moved to the test set until its coverage reaches `k_per_class`. An image
/// counts towards all of its classes, so the test set can be smaller than
/// `classes * k_per_class`.
pub fn balanced_test_split(
    images: &[AnnotatedImage],
    k_per_class: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedImage>, Vec<AnnotatedImage>)> {
    let mut availability: BTreeMap<&str, usize> = BTreeMap::new();
    for img in images {
        for l in &img.labels {
            *availability.entry(l.as_str()).or_default() += 1;
        }
    }
    let deficient: Vec<String> = availability
        .iter()
        .filter(|(_, &n)| n < k_per_class + 1)
        .map(|(c, _)| c.to_string())
        .collect();
    if !deficient.is_empty() {
        return Err(Error::DeficientClasses(deficient));
    }

    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut classes: Vec<(&str, usize)> = availability.iter().map(|(&c, &n)| (c, n)).collect();
    classes.sort_by_key(|&(c, n)| (n, c));

    let mut coverage: HashMap<&str, usize> = HashMap::new();
    let mut in_test = vec![false; images.len()];
    let mut test = Vec::new();
    for (class, _) in classes {
        for &i in &order {
            if coverage.get(class).copied().unwrap_or(0) >= k_per_class {
                break;
            }
            if in_test[i] || !images[i].labels.contains(class) {
                continue;
            }
            in_test[i] = true;
            for l in &images[i].labels {
                *coverage.entry(l.as_str()).or_default() += 1;
            }
            test.push(images[i].clone());
        }
    }
    let train = images
        .iter()
        .zip(&in_test)
        .filter(|(_, &t)| !t)
        .map(|(img, _)| img.clone())
        .collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Majority,
    Moderate,
    Minority,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Majority, Tier::Moderate, Tier::Minority];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Majority => "majority",
            Tier::Moderate => "moderate",
            Tier::Minority => "minority",
        }
    }
}

/// Class-size boundaries: minority below `minority_below`, majority above
/// `majority_above`, moderate in between (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub minority_below: usize,
    pub majority_above: usize,
}

impl Default for TierThresholds {
    fn default() -> Self {
        TierThresholds {
            minority_below: 200,
            majority_above: 900,
        }
    }
}

pub fn tier_of(size: usize, thresholds: TierThresholds) -> Tier {
    if size < thresholds.minority_below {
        Tier::Minority
    } else if size > thresholds.majority_above {
        Tier::Majority
    } else {
        Tier::Moderate
    }
}

pub fn tier_split(train_class_sizes: &[usize], thresholds: TierThresholds) -> Vec<Tier> {
    train_class_sizes
        .iter()
        .map(|&n| tier_of(n, thresholds))
        .collect()
}

/// Summary written next to the curated task files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub groups: Vec<Vec<String>>,
    pub task_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
    pub class_sizes: BTreeMap<String, usize>,
    pub dropped_count: usize,
    pub total_images: usize,
    pub tier_map: BTreeMap<String, Tier>,
}

/// Train/test images of one curated task.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedTask {
    pub train: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationParams {
    pub ngroups: usize,
    pub beta: f64,
    pub min_classes: usize,
    pub k_test: usize,
    pub seed: u64,
    pub tiers: TierThresholds,
}

/// Clustering, assignment, per-task test split and report in one pass.
pub fn curate(corpus: &AnnotationCorpus, params: &CurationParams) -> Result<(Vec<CuratedTask>, CurationReport)> {
    let groups = hierarchical_class_clustering(corpus, params.ngroups, params.beta, params.min_classes)?;
    let assignment = assign_tasks(corpus, &groups);
    let mut tasks = Vec::new();
    let mut class_sizes: BTreeMap<String, usize> = BTreeMap::new();
    for (t, images) in assignment.tasks.iter().enumerate() {
        let (train, test) = balanced_test_split(images, params.k_test, params.seed.wrapping_add(t as u64))?;
        for img in &train {
            for l in &img.labels {
                *class_sizes.entry(l.clone()).or_default() += 1;
            }
        }
        tasks.push(CuratedTask { train, test });
    }
    for c in &corpus.class_vocab {
        class_sizes.entry(c.clone()).or_default();
    }
    let tier_map = class_sizes
        .iter()
        .map(|(c, &n)| (c.clone(), tier_of(n, params.tiers)))
        .collect();
    let report = CurationReport {
        groups: groups.groups,
        task_sizes: tasks.iter().map(|t| t.train.len()).collect(),
        test_sizes: tasks.iter().map(|t| t.test.len()).collect(),
        class_sizes,
        dropped_count: assignment.dropped.len(),
        total_images: corpus.images.len(),
        tier_map,
    };
    Ok((tasks, report))
}
