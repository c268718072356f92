//! Flat `key = value` config files, merged into the command line ahead of the
//! user's own flags so that flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Command};

use crate::error::{CliError, CliResult};

pub const CONFIG_ENV: &str = "SPST_CONFIG";

pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("config line {}: expected `key = value`", i + 1)))?;
        out.push((key.trim().replace('_', "-"), value.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

/// Value of `--config` on the raw command line, or the path in `SPST_CONFIG`.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut iter = args.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Rewrites `args` so the config file's settings appear right after the subcommand
/// name. Keys must name a long flag of that subcommand or a global flag.
pub fn merge_config(cmd: &Command, args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse_config(&text)?;

    let Some(pos) = args.iter().position(|a| cmd.find_subcommand(&*a.to_string_lossy()).is_some()) else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&*args[pos].to_string_lossy()).expect("found above");

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::input(format!("{}: `config` cannot be set from a config file", path.display())));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments().filter(|a| a.is_global_set()))
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::input(format!("{}: unknown config key `{key}`", path.display())))?;
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(CliError::input(format!(
                        "{}: `{key}` expects true or false, got `{other}`",
                        path.display()
                    )))
                }
            },
            _ => {
                injected.push(format!("--{key}").into());
                injected.push(value.into());
            }
        }
    }
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes_keys() {
        let cfg = parse_config("# c\nbatch_size = 8\nplan = \"8,8\"\n\n").unwrap();
        assert_eq!(cfg, vec![("batch-size".into(), "8".into()), ("plan".into(), "8,8".into())]);
        assert!(parse_config("nonsense").is_err());
    }
}
