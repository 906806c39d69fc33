//! `key = value` config files. Keys are long flag names of the command they
//! are passed to; values fill in flags the command line left unset.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

/// Keys that make no sense inside a config file.
const RESERVED: [&str; 3] = ["config", "help", "version"];

pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("{}:{}: empty key", path.display(), n + 1);
        }
        if pairs.iter().any(|(p, _)| *p == key) {
            bail!("{}:{}: duplicate key `{key}`", path.display(), n + 1);
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Follows the subcommand chain down to the command that owns the flags.
fn leaf<'a>(mut cmd: &'a Command, mut m: &'a ArgMatches) -> (&'a Command, &'a ArgMatches) {
    while let Some((name, sub)) = m.subcommand() {
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    (cmd, m)
}

/// Returns `argv` extended with the settings of the `--config` file, if any.
///
/// Only flags whose value did not come from the command line are filled in,
/// so the command line always wins. Unknown keys are an error.
pub fn merge(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let lenient = cmd.clone().ignore_errors(true);
    let Ok(m) = lenient.clone().try_get_matches_from(&argv) else {
        return Ok(argv);
    };
    let (leaf_cmd, leaf_m) = leaf(&lenient, &m);
    let Some(path) = leaf_cmd
        .get_arguments()
        .any(|a| a.get_id() == "config")
        .then(|| leaf_m.get_one::<std::path::PathBuf>("config").cloned())
        .flatten()
    else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("config {}", path.display()))?;
    let mut out = argv;
    for (key, value) in parse_pairs(&text, &path)? {
        let arg = leaf_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !RESERVED.contains(&key.as_str()))
            .ok_or_else(|| anyhow!("{}: unknown key `{key}`", path.display()))?;
        if leaf_m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                other => bail!("{}: `{key}` expects true or false, got `{other}`", path.display()),
            },
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    Ok(out)
}

/// Effective settings of the leaf command as a config file that reproduces them.
pub fn render(cmd: &Command, m: &ArgMatches, skip: &[&str]) -> String {
    let (leaf_cmd, leaf_m) = leaf(cmd, m);
    let mut s = String::new();
    for arg in leaf_cmd.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if RESERVED.contains(&long) || skip.contains(&long) {
            continue;
        }
        let Some(raw) = leaf_m.get_raw(arg.get_id().as_str()) else {
            continue;
        };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        if matches!(arg.get_action(), ArgAction::SetTrue) || !vals.is_empty() {
            s.push_str(&format!("{long} = {}\n", vals.join(",")));
        }
    }
    s
}
