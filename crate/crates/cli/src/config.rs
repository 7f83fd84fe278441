//! `key=value` config files, spliced into the argument list ahead of the
//! user's own flags so that flags win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::{CliError, CliResult};

/// Parses config text into `(key, value)` pairs. Blank lines and `#` comments
/// are ignored; keys may use `-` or `_`.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::validation(format!(
                "config line {}: expected key=value, got {raw:?}",
                i + 1
            ))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::validation(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

/// Turns config entries into flags of `subcommand`, checking every key.
fn config_flags(subcommand: &str, entries: &[(String, String)]) -> CliResult<Vec<OsString>> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| CliError::validation(format!("unknown subcommand {subcommand}")))?;
    let mut flags = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                CliError::validation(format!("config key {key:?} is not a flag of {subcommand}"))
            })?;
        if arg.get_action().takes_values() {
            flags.push(format!("--{key}={value}").into());
        } else {
            match value.as_str() {
                "true" => flags.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(CliError::validation(format!(
                        "config key {key}: expected true or false, got {value:?}"
                    )))
                }
            }
        }
    }
    Ok(flags)
}

/// Returns `args` with the flags from `--config` inserted right after the
/// subcommand name.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let entries = parse_config(&text)?;
    let cmd = Cli::command();
    let position = args.iter().enumerate().skip(1).find_map(|(i, a)| {
        let name = a.to_str()?;
        cmd.find_subcommand(name).map(|_| (i, name.to_string()))
    });
    let Some((i, name)) = position else {
        return Ok(args);
    };
    let flags = config_flags(&name, &entries)?;
    let mut out = args[..=i].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[i + 1..]);
    Ok(out)
}
