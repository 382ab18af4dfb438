use serde::Serialize;

use crate::error::Result;
use crate::memory::ReplayMemory;
use crate::stats::RunningStats;
use crate::types::{ClassId, LabeledExample, SampleId};
use crate::Rng;

/// What a memory policy did with one incoming example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StepOutcome {
    /// Memory had room; the example was stored unconditionally.
    Fill,
    /// The example replaced `victim`.
    Admit {
        victim: SampleId,
        probability: f64,
        over_class: Option<ClassId>,
    },
    /// The example was not stored.
    Reject { probability: f64 },
}

impl StepOutcome {
    pub fn event_name(&self) -> &'static str {
        match self {
            StepOutcome::Fill => "fill",
            StepOutcome::Admit { .. } => "admit",
            StepOutcome::Reject { .. } => "reject",
        }
    }
}

/// A memory maintenance rule applied once per stream example.
///
/// Callers update `stats` with the example before invoking [`step`](Self::step).
pub trait MemoryPolicy {
    fn step(
        &mut self,
        memory: &mut ReplayMemory,
        stats: &RunningStats,
        example: LabeledExample,
        rng: &mut Rng,
    ) -> Result<StepOutcome>;
}
