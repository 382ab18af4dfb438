use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, LabeledExample, SampleId};

/// Bounded sample store with a per-class index.
///
/// Samples live in a slot vector so that a uniformly random stored sample can
/// be drawn in constant time; `class_index[i]` holds the ids of the stored
/// samples whose label carries class `i`, and `class_counts[i]` its size.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    slots: Vec<LabeledExample>,
    slot_of: HashMap<SampleId, usize>,
    class_index: Vec<BTreeSet<SampleId>>,
    class_counts: Vec<usize>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity,
            slots: Vec::with_capacity(capacity),
            slot_of: HashMap::with_capacity(capacity),
            class_index: Vec::new(),
            class_counts: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() >= self.capacity
    }

    pub fn insert(&mut self, example: LabeledExample) -> Result<()> {
        if self.slots.len() >= self.capacity {
            return Err(Error::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        if self.slot_of.contains_key(&example.id) {
            return Err(Error::DuplicateId(example.id));
        }
        let need = example.label.universe_hint();
        if need > self.class_counts.len() {
            self.class_counts.resize(need, 0);
            self.class_index.resize_with(need, BTreeSet::new);
        }
        for c in example.label.iter() {
            self.class_index[c].insert(example.id);
            self.class_counts[c] += 1;
        }
        self.slot_of.insert(example.id, self.slots.len());
        self.slots.push(example);
        Ok(())
    }

    pub fn remove(&mut self, id: SampleId) -> Result<LabeledExample> {
        let slot = self.slot_of.remove(&id).ok_or(Error::UnknownId(id))?;
        let example = self.slots.swap_remove(slot);
        if let Some(moved) = self.slots.get(slot) {
            self.slot_of.insert(moved.id, slot);
        }
        for c in example.label.iter() {
            self.class_index[c].remove(&id);
            self.class_counts[c] -= 1;
        }
        Ok(example)
    }

    pub fn get(&self, id: SampleId) -> Option<&LabeledExample> {
        self.slot_of.get(&id).map(|&s| &self.slots[s])
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.slot_of.contains_key(&id)
    }

    /// Sample stored at `slot`; slots are `0..len()` in no particular order.
    pub fn at_slot(&self, slot: usize) -> &LabeledExample {
        &self.slots[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledExample> {
        self.slots.iter()
    }

    /// Stored ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<SampleId> {
        let mut ids: Vec<SampleId> = self.slots.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Per-class sample counts `l_i`; entries beyond the slice are zero.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_count(&self, class: ClassId) -> usize {
        self.class_counts.get(class).copied().unwrap_or(0)
    }

    /// Ids of stored samples labeled with `class`, ascending.
    pub fn class_members(&self, class: ClassId) -> impl Iterator<Item = SampleId> + '_ {
        self.class_index
            .get(class)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    /// Sum of `l_i` over classes, i.e. total label occurrences in memory.
    pub fn total_label_count(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// Recounts class occurrences from the stored labels, ignoring the index.
    pub fn recount(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_counts.len()];
        for e in &self.slots {
            for c in e.label.iter() {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn snapshot(&self, include_features: bool) -> MemorySnapshot {
        let mut samples: Vec<SnapshotSample> = self
            .slots
            .iter()
            .map(|e| SnapshotSample {
                id: e.id,
                labels: e.label.classes().to_vec(),
                features: include_features.then(|| e.features.clone()),
            })
            .collect();
        samples.sort_unstable_by_key(|s| s.id);
        MemorySnapshot {
            capacity: self.capacity,
            samples,
            class_counts: self.class_counts.clone(),
        }
    }
}

/// Serialized memory state: `{capacity, samples: [{id, labels}], class_counts}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub capacity: usize,
    pub samples: Vec<SnapshotSample>,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSample {
    pub id: SampleId,
    pub labels: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}
