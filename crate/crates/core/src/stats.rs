use serde::{Deserialize, Serialize};

use crate::types::{ClassId, MultiHotLabel};

/// Running class frequencies of the stream seen so far.
///
/// `per_class_count[i]` counts label occurrences of class `i`, while
/// `total_seen` counts datapoints; a multi-labeled example bumps several
/// class counters but the total only once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningStats {
    per_class_count: Vec<u64>,
    total_seen: u64,
    unique_classes: usize,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stats pre-sized for `num_classes` classes, all counts zero.
    pub fn with_classes(num_classes: usize) -> Self {
        RunningStats {
            per_class_count: vec![0; num_classes],
            ..Self::default()
        }
    }

    /// Records one datapoint. Unseen class ids grow the class universe.
    pub fn update(&mut self, label: &MultiHotLabel) {
        let need = label.universe_hint();
        if need > self.per_class_count.len() {
            self.per_class_count.resize(need, 0);
        }
        for c in label.iter() {
            if self.per_class_count[c] == 0 {
                self.unique_classes += 1;
            }
            self.per_class_count[c] += 1;
        }
        self.total_seen += 1;
    }

    pub fn count(&self, class: ClassId) -> u64 {
        self.per_class_count.get(class).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.per_class_count
    }

    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    pub fn unique_classes(&self) -> usize {
        self.unique_classes
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_count.len()
    }

    /// Class ids with a nonzero count, ascending.
    pub fn observed_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.per_class_count
            .iter()
            .enumerate()
            .filter_map(|(i, &n)| (n > 0).then_some(i))
    }
}
