//! Train, evaluate and run ablation sweeps from the command line.

pub mod ablate;
pub mod config;
pub mod train;

use std::path::PathBuf;

use maser_core::MaserError;

/// Environment variable overriding the default output root.
pub const OUTPUT_ROOT_VAR: &str = "MASER_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// 1 for bad input (config, flags, files), 2 for failures while running.
pub fn exit_code(err: &MaserError) -> i32 {
    match err {
        MaserError::Config(_) | MaserError::Parse(_) => 1,
        _ => 2,
    }
}
