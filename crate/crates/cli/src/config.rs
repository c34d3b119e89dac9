//! `key = value` config files and the resolved-config echo.
//!
//! Keys are long flag names (`-` and `_` are interchangeable). Values from
//! the file are spliced into argv ahead of the user's flags; a key that was
//! also given on the command line is ignored, so explicit flags win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{parser::ValueSource, Arg, ArgAction, ArgMatches, Command, CommandFactory};

use crate::error::CliError;
use crate::Cli;

const NOT_SETTABLE: [&str; 3] = ["help", "version", "config"];

/// Parse argv, folding in the subcommand's `--config` file when given.
pub fn parse(argv: Vec<OsString>) -> Result<(Cli, String, ArgMatches), CliError> {
    let m = Cli::command().try_get_matches_from(&argv)?;
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let name = name.to_string();
    let Some(path) = sub.get_one::<PathBuf>("config").cloned() else {
        let cli = Cli::from_matches(&m)?;
        let sub = sub.clone();
        return Ok((cli, name, sub));
    };

    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Domain(format!("config: {}: {e}", path.display())))?;
    let entries = parse_entries(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(&name).expect("parsed subcommand exists");
    let mut injected = Vec::new();
    for (line, key, value) in &entries {
        let arg = find_arg(sub_cmd, key).ok_or_else(|| {
            CliError::Usage(format!(
                "config {} line {line}: unknown key `{key}` for `{name}`",
                path.display()
            ))
        })?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let long = arg.get_long().expect("settable args have a long name");
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{long}"))),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config {} line {line}: `{key}` takes true or false, got `{other}`",
                        path.display()
                    )))
                }
            }
        } else {
            injected.push(OsString::from(format!("--{long}={value}")));
        }
    }

    let pos = argv
        .iter()
        .skip(1)
        .position(|a| a.to_str() == Some(name.as_str()))
        .expect("subcommand name is in argv")
        + 1;
    let mut merged: Vec<OsString> = argv[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&argv[pos + 1..]);
    let m = Cli::command().try_get_matches_from(&merged)?;
    let cli = Cli::from_matches(&m)?;
    let sub = m.subcommand().expect("subcommand is required").1.clone();
    Ok((cli, name, sub))
}

/// `(line number, key, value)` for every setting. Blank lines and `#`
/// comments are skipped; values may be quoted.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`", i + 1));
        };
        let key = k.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(format!("line {}: bad key `{key}`", i + 1));
        }
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        out.push((i + 1, key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn find_arg<'a>(cmd: &'a Command, key: &str) -> Option<&'a Arg> {
    let key = key.replace('_', "-");
    cmd.get_arguments()
        .filter(|a| !NOT_SETTABLE.contains(&a.get_id().as_str()))
        .find(|a| a.get_long() == Some(key.as_str()))
}

/// Render every flag of `cmd` with its effective value. The output parses
/// back as a config file; positional inputs and unset options appear as
/// comments.
pub fn render_resolved(cmd: &Command, m: &ArgMatches) -> String {
    let mut out = format!("# pulseforge {} {}\n", cmd.get_name(), env!("CARGO_PKG_VERSION"));
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if NOT_SETTABLE.contains(&id) {
            continue;
        }
        let values: Option<Vec<String>> = m
            .get_raw(id)
            .map(|vs| vs.map(|v| v.to_string_lossy().into_owned()).collect());
        match (arg.get_long(), values) {
            (None, Some(v)) => writeln!(out, "# {id} = {}", v.join(" ")),
            (None, None) => writeln!(out, "# {id} is unset"),
            (Some(long), Some(v)) => writeln!(out, "{long} = {}", v.join(",")),
            (Some(long), None) => writeln!(out, "# {long} is unset"),
        }
        .expect("writing to a String");
    }
    out
}

pub fn write_resolved(cmd: &Command, m: &ArgMatches, path: &Path) -> Result<(), CliError> {
    crate::io::write_string(path, &render_resolved(cmd, m))
}
