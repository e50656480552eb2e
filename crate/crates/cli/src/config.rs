//! `key = value` configuration files.
//!
//! Keys are the long flag names of a subcommand without the leading dashes
//! (`lambda`, `n-max` or `n_max`, `L`). Boolean flags take `true` or `false`.
//! Blank lines and lines starting with `#` are ignored. Values are spliced
//! into the argument list ahead of the user's own flags, so flags given on
//! the command line win.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "--config: line {}: expected key = value, got {line:?}",
                i + 1
            )));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Validation(format!("--config: line {}: empty key", i + 1)));
        }
        out.push(Entry { key, value, line: i + 1 });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<Entry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("--config: cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Turns entries into `--key=value` tokens for `sub`, rejecting keys the
/// subcommand does not know.
pub fn to_args(entries: &[Entry], sub: &Command) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for e in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "--config: line {}: `{}` is not a flag of `piml {}`",
                    e.line,
                    e.key,
                    sub.get_name()
                ))
            })?;
        if arg.get_action().takes_values() {
            out.push(format!("--{}={}", e.key, e.value).into());
        } else {
            match e.value.as_str() {
                "true" => out.push(format!("--{}", e.key).into()),
                "false" => {}
                other => {
                    return Err(CliError::Validation(format!(
                        "--config: line {}: `{}` is a switch and takes true or false, got {other:?}",
                        e.line, e.key
                    )))
                }
            }
        }
    }
    Ok(out)
}
