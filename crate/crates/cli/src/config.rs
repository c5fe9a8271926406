//! Flat `key = value` config files whose keys mirror the long flag names.
//!
//! A file is merged by turning every entry into a flag placed ahead of the
//! ones typed on the command line; with `args_override_self` the later,
//! explicit flag wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::CliError;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: bad key '{key}'", no + 1)));
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

pub fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => flags.push(format!("--{key}={value}").into()),
        }
    }
    flags
}

fn config_path(args: &[OsString]) -> Option<Result<OsString, CliError>> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return Some(
                it.next()
                    .cloned()
                    .ok_or_else(|| CliError::Usage("--config needs a path".into())),
            );
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(Ok(p.into()));
        }
    }
    None
}

/// Splices the entries of the `--config` file (if any) into `args`, right
/// before the first flag following the subcommand names.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let path = match config_path(&args) {
        None => return Ok(args),
        Some(p) => p?,
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", Path::new(&path).display()))
    })?;
    let flags = to_flags(&parse(&text)?);
    let at = args
        .iter()
        .skip(1)
        .position(|a| a.to_string_lossy().starts_with('-'))
        .map_or(args.len(), |i| i + 1);
    let mut out = args[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
