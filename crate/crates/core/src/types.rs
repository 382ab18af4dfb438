use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class index in `0..C`.
pub type ClassId = usize;

/// Stream-assigned sequence number of an example.
pub type SampleId = u64;

/// Multi-hot label stored sparsely as the sorted set of its active class ids.
///
/// The dense vector view is available through [`MultiHotLabel::to_dense`]; the
/// sparse form lets the class universe grow without rewriting stored labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<ClassId>", into = "Vec<ClassId>")]
pub struct MultiHotLabel(Vec<ClassId>);

impl MultiHotLabel {
    pub fn new(classes: impl IntoIterator<Item = ClassId>) -> Self {
        let mut v: Vec<ClassId> = classes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        MultiHotLabel(v)
    }

    /// Builds a label from a dense 0/1 vector.
    pub fn from_bits(bits: &[bool]) -> Self {
        MultiHotLabel(
            bits.iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect(),
        )
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    /// Number of active classes.
    pub fn cardinality(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One past the largest class id, i.e. the minimum universe size holding this label.
    pub fn universe_hint(&self) -> usize {
        self.0.last().map_or(0, |&c| c + 1)
    }

    pub fn to_dense(&self, num_classes: usize) -> Vec<bool> {
        let mut bits = vec![false; num_classes.max(self.universe_hint())];
        for c in self.iter() {
            bits[c] = true;
        }
        bits
    }
}

impl From<Vec<ClassId>> for MultiHotLabel {
    fn from(v: Vec<ClassId>) -> Self {
        MultiHotLabel::new(v)
    }
}

impl From<MultiHotLabel> for Vec<ClassId> {
    fn from(l: MultiHotLabel) -> Self {
        l.0
    }
}

/// One datapoint of the stream; this is also the JSON-Lines record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: SampleId,
    pub features: Vec<f64>,
    #[serde(rename = "labels")]
    pub label: MultiHotLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
}

impl LabeledExample {
    pub fn new(id: SampleId, features: Vec<f64>, label: MultiHotLabel) -> Self {
        LabeledExample {
            id,
            features,
            label,
            task: None,
        }
    }

    pub fn with_task(mut self, task: usize) -> Self {
        self.task = Some(task);
        self
    }

    /// Checks the stream admission rules: non-empty label and finite features.
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::EmptyLabel(self.id));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeatures { id: self.id });
        }
        Ok(())
    }
}

/// Parses a JSON-Lines stream, validating every example and id uniqueness.
pub fn read_jsonl(text: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        ex.validate()?;
        if !seen.insert(ex.id) {
            return Err(Error::Parse {
                line: lineno + 1,
                reason: format!("duplicate id {}", ex.id),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl(examples: &[LabeledExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&serde_json::to_string(ex).expect("example serializes"));
        s.push('\n');
    }
    s
}
