//! Replay memories for class-imbalanced, task-free continual learning.
//!
//! The crate provides two memory policies over a bounded [`ReplayMemory`]:
//!
//! - [`crs`]: conventional reservoir sampling (Vitter's Algorithm R), which
//!   keeps a uniform sample of the stream.
//! - [`prs`]: partitioning reservoir sampling, which steers the per-class
//!   composition of the memory towards target quotas derived from the running
//!   class frequencies raised to a power of allocation `rho`.
//!
//! Around them sit the pieces needed to exercise the policies end to end:
//! long-tailed stream generation ([`streamgen`]), splitting multi-label
//! annotation corpora into sequential tasks ([`curation`]), a small online
//! learner with replay ([`learner`], [`experiment`]) and evaluation
//! ([`metrics`]).

pub mod crs;
pub mod curation;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod prs;
pub mod stats;
pub mod streamgen;
pub mod types;

pub use error::{Error, Result};
pub use memory::{MemorySnapshot, ReplayMemory};
pub use policy::{MemoryPolicy, StepOutcome};
pub use stats::RunningStats;
pub use types::{ClassId, LabeledExample, MultiHotLabel, SampleId};

/// Deterministic generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate's deterministic generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Independent generator number `stream` derived from `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}
