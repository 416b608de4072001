//! TOML run configuration.
//!
//! Precedence, lowest first: the preset named by the file's `preset` key
//! (`paper` by default, or `desk`), the file's own values, `--set key=value`
//! overrides in order, then dedicated flags such as `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use phg_core::training::RunConfig;
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "PHG_CONFIG";
/// Name of the effective config echoed into every output directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Preset::Paper),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::Paper => RunConfig::default(),
            Preset::Desk => RunConfig::desk(),
        }
    }
}

fn to_table(cfg: &RunConfig, path: &Path) -> Result<Table> {
    Table::try_from(cfg).map_err(|e| CliError::format(path, e.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `a.b.c=value`; the value is read as a TOML literal, falling back
/// to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(|p| p.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("override {s:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) {
    let (last, parents) = path.split_last().expect("nonempty override path");
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        t = entry.as_table_mut().unwrap();
    }
    t.insert(last.clone(), value);
}

/// Effective configuration from file text and `--set` overrides.
pub fn resolve(text: &str, overrides: &[String], origin: &Path) -> Result<RunConfig> {
    let mut file: Table = text.parse().map_err(|e: toml::de::Error| CliError::format(origin, e.to_string()))?;
    let preset = match file.remove("preset") {
        None => Preset::Paper,
        Some(Value::String(s)) => {
            Preset::parse(&s).ok_or_else(|| CliError::format(origin, format!("unknown preset {s:?}")))?
        }
        Some(v) => return Err(CliError::format(origin, format!("preset must be a string, got {v}"))),
    };
    let mut table = to_table(&preset.config(), origin)?;
    merge(&mut table, file);
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut table, &path, value);
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::format(origin, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `--config`, else `$PHG_CONFIG`; neither is a usage error.
pub fn locate(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
        _ => Err(CliError::Usage(format!("no config file: pass --config or set {CONFIG_ENV}"))),
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    resolve(&text, overrides, path)
}

pub fn render(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::format(Path::new(ECHO_FILE), e.to_string()))
}

/// Writes the effective configuration as `config.toml` under `dir`.
pub fn echo(dir: &Path, cfg: &RunConfig) -> Result<()> {
    crate::io::write_text(&dir.join(ECHO_FILE), &render(cfg)?)
}
