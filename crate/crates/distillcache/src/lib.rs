//! File formats, IO and the command-line pipeline around
//! `distillcache-core`: directory scanning into JSON Lines manifests, teacher
//! dump exchange, archive files with positional random access, point-cloud
//! files, run configuration and the subcommands themselves.
#![forbid(unsafe_code)]

pub mod archive_io;
pub mod cloud;
pub mod commands;
pub mod config;
pub mod dump;
pub mod error;
pub mod scan;

pub use distillcache_core as core;
pub use error::{CliError, CliResult};

/// File-name form of a sample id: `/` becomes `__`.
pub fn sample_file_stem(sample_id: &str) -> String {
    sample_id.replace('/', "__")
}

/// Archive file name for a sample id.
pub fn archive_file_name(sample_id: &str) -> String {
    format!("{}.{}", sample_file_stem(sample_id), archive_io::ARCHIVE_EXTENSION)
}

/// Stable 64-bit FNV-1a hash, used to derive per-sample seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}
