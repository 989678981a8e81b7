//! `--config` files: `key = value` lines expanded into flags.
//!
//! Expanded flags are placed right after the subcommand, and a key is
//! skipped whenever the same flag already appears on the command line, so
//! explicit flags always win.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Subcommands that take a nested subcommand before their flags.
const NESTED: &[&str] = &["simulate"];

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// `true` turns the key into a bare switch and `false` drops it.
pub fn parse_config(text: &str) -> Result<Vec<(String, Option<String>)>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value, got {line:?}", idx + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", idx + 1);
        }
        match value.trim() {
            "true" => entries.push((key, None)),
            "false" => {}
            v => entries.push((key, Some(v.trim_matches('"').to_string()))),
        }
    }
    Ok(entries)
}

fn config_path(argv: &[String]) -> Result<Option<String>> {
    let mut found = None;
    for (i, arg) in argv.iter().enumerate() {
        if let Some(p) = arg.strip_prefix("--config=") {
            found = Some(p.to_string());
        } else if arg == "--config" {
            match argv.get(i + 1) {
                Some(p) => found = Some(p.clone()),
                None => bail!("--config needs a file path"),
            }
        }
    }
    Ok(found)
}

fn long_flags(argv: &[String]) -> HashSet<String> {
    argv.iter()
        .filter_map(|a| {
            if a == "-o" {
                return Some("output".to_string());
            }
            a.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).to_string())
        })
        .collect()
}

/// Returns `argv` with the config file's flags spliced in.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let given = long_flags(&argv);
    let mut extra = Vec::new();
    for (key, value) in parse_config(&text)? {
        if key == "config" || given.contains(&key) {
            continue;
        }
        extra.push(format!("--{key}"));
        extra.extend(value);
    }
    let mut at = 1;
    if let Some(sub) = argv.get(1) {
        if !sub.starts_with('-') {
            at = 2;
            if NESTED.contains(&sub.as_str()) && argv.get(2).is_some_and(|s| !s.starts_with('-')) {
                at = 3;
            }
        }
    }
    let at = at.min(argv.len());
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
