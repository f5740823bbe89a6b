//! The versioned JSON envelope shared by all commands and atomic file
//! writing (temp file in the destination directory, then rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{CliError, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Every JSON output carries the schema version, the command, the resolved
/// run configuration, and a command-specific result block; the layout is
/// described by `schemas/output-v1.json` at the repository root.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub result: T,
}

pub fn envelope_json<T: Serialize>(config: &RunConfig, result: T) -> Result<String, CliError> {
    let env = Envelope { schema_version: SCHEMA_VERSION, command: &config.command, config, result };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    Ok(text)
}

/// Write to a sibling temp file and rename over the destination, so a
/// crashed run never leaves a half-written output behind.
pub fn write_atomic(path: &str, bytes: &[u8]) -> Result<(), CliError> {
    let dest = Path::new(path);
    let name = dest
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("output path `{path}` has no file name")))?;
    let tmp = dest.with_file_name(format!("{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dest)?;
    Ok(())
}

/// Send text to the output path atomically, or to stdout when no path was
/// configured.
pub fn emit(path: Option<&str>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
