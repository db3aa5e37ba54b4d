//! Sensor-first activity discovery.
//!
//! The crate turns multimodal, privacy-preserving sensor recordings into
//! activity-recognition models without a predefined label set:
//!
//! 1. [`sensor`] loads, validates and synthesizes sessions.
//! 2. [`featurize`] slides 5 s windows (0.5 s stride) over every stream.
//! 3. [`keymoments`] picks the few windows worth describing, using density
//!    clustering and an online Gaussian-mixture change detector.
//! 4. [`annotate`] asks a pluggable describer about those moments only.
//! 5. [`labels`] consolidates descriptions into zones and activity labels and
//!    controls their granularity with a single relaxation parameter.
//! 6. [`har`] trains zone-first ensembles that run on sensors alone.
//! 7. [`incremental`] replays the session-by-session training protocol.
//!
//! [`pipeline`] wires the stages together for the command-line tool.

pub mod annotate;
pub mod config;
pub mod featurize;
pub mod har;
pub mod incremental;
pub mod keymoments;
pub mod labels;
pub mod modality;
pub mod pipeline;
pub mod seed;
pub mod sensor;
mod stats;

pub use modality::Modality;

/// Version tag written into every file this crate produces.
pub const FORMAT_VERSION: u32 = 1;

/// Rejects documents written by an incompatible version of the crate.
pub(crate) fn check_format_version(found: u32, what: &str) -> Result<(), String> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(format!(
            "{what}: unsupported format version {found} (expected {FORMAT_VERSION})"
        ))
    }
}
