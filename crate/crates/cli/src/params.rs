//! Flat `key = value` parameters: declared defaults, then a config file,
//! then command-line flags, each overriding the last.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::CliError;

/// Marks a key without a default that must be supplied.
pub const REQUIRED: &str = "";

/// One parameter. A `flag` key also accepts a bare `--name` meaning `true`.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub flag: bool,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, flag: false }
}

pub const fn flag(name: &'static str, help: &'static str) -> Key {
    Key { name, default: "false", help, flag: true }
}

/// Adds one `--name <value>` argument per key, plus `--config`.
pub fn declare(mut cmd: Command, keys: &[Key]) -> Command {
    cmd = cmd.arg(Arg::new("config").long("config").value_name("FILE").help("key = value file; flags override it"));
    for k in keys {
        let mut arg = Arg::new(k.name).long(k.name).value_name("VALUE").action(ArgAction::Set);
        let help = if k.default == REQUIRED {
            format!("{} (required)", k.help)
        } else {
            format!("{} [default: {}]", k.help, k.default)
        };
        arg = arg.help(help);
        if k.flag {
            arg = arg.num_args(0..=1).default_missing_value("true");
        } else {
            arg = arg.allow_hyphen_values(true);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Resolved parameters of one command, in declaration order.
#[derive(Debug, Clone)]
pub struct Params {
    command: String,
    order: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
}

impl Params {
    pub fn resolve(command: &str, keys: &[Key], matches: &ArgMatches) -> Result<Params, CliError> {
        let mut values: BTreeMap<&'static str, String> =
            keys.iter().filter(|k| k.default != REQUIRED).map(|k| (k.name, k.default.to_string())).collect();
        if let Some(path) = matches.get_one::<String>("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config file {path}: {e}")))?;
            for (name, value) in parse_config(&text, keys)? {
                values.insert(name, value);
            }
        }
        for k in keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                values.insert(k.name, v.clone());
            }
        }
        if let Some(k) = keys.iter().find(|k| !values.contains_key(k.name)) {
            return Err(CliError::Usage(format!("missing required parameter --{}", k.name)));
        }
        Ok(Params { command: command.to_string(), order: keys.iter().map(|k| k.name).collect(), values })
    }

    pub fn str(&self, name: &str) -> &str {
        self.values.get(name).unwrap_or_else(|| panic!("undeclared parameter {name}"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.str(name)
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("--{name}: cannot parse '{}': {e}", self.str(name))))
    }

    /// `None` for the literal value `none`.
    pub fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.str(name).trim().eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    /// Comma-separated values.
    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.str(name)
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|e| CliError::Usage(format!("--{name}: cannot parse '{t}': {e}"))))
            .collect()
    }

    /// Comma-separated values, or `lo:hi:count` for an evenly spaced range.
    pub fn range(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let s = self.str(name).trim();
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 1 {
            return self.list(name);
        }
        let bad = || CliError::Usage(format!("--{name}: expected lo:hi:count, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Ok(dld_core::harness::GridSpec::linspace(lo, hi, count))
    }

    /// The resolved parameters as a config file that reproduces the run.
    pub fn echo(&self) -> String {
        let mut out = format!("# resolved parameters of `dld {}`\n", self.command);
        for name in &self.order {
            out.push_str(&format!("{name} = {}\n", self.values[name]));
        }
        out
    }

    pub fn write_echo(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.echo()).map_err(|e| CliError::Core(e.into()))
    }
}

/// `key = value` lines; `#` starts a comment. Unknown keys are errors.
pub fn parse_config(text: &str, keys: &[Key]) -> Result<Vec<(&'static str, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let name = name.trim();
        let k = keys
            .iter()
            .find(|k| k.name == name)
            .ok_or_else(|| CliError::Usage(format!("config line {}: unknown key '{name}'", i + 1)))?;
        out.push((k.name, value.trim().to_string()));
    }
    Ok(out)
}
