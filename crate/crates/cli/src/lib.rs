//! Batch experiment runner for cross-subject sEMG adaptation studies.
//!
//! The library behind the `myoexp` binary. An experiment is described by one
//! JSON config ([`config::ExperimentConfig`]): where the cohort comes from
//! (synthetic or a directory of CSV recordings), which subjects are targets
//! and which are sources, the methods to compare, and every preprocessing
//! and search parameter. The pipeline per subject is windowing → repetition
//! split → stream subsampling → combined features; per target it is grid
//! search → learning curve over growing training prefixes → CSV/JSON
//! artifacts. Source models are grid-searched once and cached on disk keyed
//! by a content hash.
//!
//! Everything is deterministic: all randomness flows from the config's
//! master seed via [`derive_seed`], reruns with the same config produce
//! byte-identical CSV bodies, and the run manifest records every derived
//! seed.

pub mod cache;
pub mod cohort;
pub mod config;
pub mod report;
pub mod runner;

use myoadapt::Error;
use sha2::{Digest, Sha256};

/// Stable, order-independent seed derivation: every consumer of randomness
/// gets its own stream identified by a purpose tag and a detail string
/// (usually a subject id), so adding or removing subjects never shifts
/// anyone else's draws.
pub fn derive_seed(master: u64, purpose: &str, detail: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(detail.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields at least 8 bytes"))
}

/// Process exit code for an error: 2 for configuration mistakes, 4 for
/// numeric failures, 3 for everything blaming the data or environment
/// (missing/ragged/unusable files, contract violations between stages, I/O).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Numeric { .. } => 4,
        Error::Schema(_)
        | Error::Parse { .. }
        | Error::Data(_)
        | Error::Domain(_)
        | Error::Io(_)
        | Error::Csv(_) => 3,
        // A serialization error outside config parsing means an unreadable
        // artifact or cache file.
        Error::Serde(_) => 3,
    }
}
