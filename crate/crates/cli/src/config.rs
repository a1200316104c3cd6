//! `key=value` configuration files whose keys are long flag names. Entries
//! are spliced into the command line unless the flag is already given there.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Command;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<ConfigEntry>> {
    let mut entries: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split_once('#').map_or(raw, |(b, _)| b).trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found {body:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(err(format!("{key} already set on line {}", prev.line)));
        }
        entries.push(ConfigEntry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn has_flag(args: &[OsString], long: &str) -> bool {
    let bare = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == bare || s.starts_with(&eq)
    })
}

/// Returns `args` with the entries of the `--config` file appended to the
/// subcommand's flags, skipping any flag present on the command line.
pub fn merge_config(args: Vec<OsString>, command: &Command) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let entries = parse_config(&text, &path)?;
    let sub = args
        .iter()
        .skip(1)
        .find_map(|a| command.find_subcommand(a.to_string_lossy().as_ref()))
        .ok_or_else(|| CliError::Argument("--config needs a subcommand".into()))?;

    let mut out = args.clone();
    for e in entries {
        let err = |message: String| CliError::Config {
            path: path.clone(),
            line: e.line,
            message,
        };
        if e.key == "config" {
            return Err(err("config files cannot include other config files".into()));
        }
        let arg = sub
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .ok_or_else(|| err(format!("{} has no flag --{}", sub.get_name(), e.key)))?;
        if has_flag(&args, &e.key) {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{}", e.key).into());
            out.push(e.value.clone().into());
        } else {
            match e.value.as_str() {
                "true" | "yes" | "1" | "" => out.push(format!("--{}", e.key).into()),
                "false" | "no" | "0" => {}
                other => return Err(err(format!("{} is a switch; {other:?} is not a boolean", e.key))),
            }
        }
    }
    Ok(out)
}
