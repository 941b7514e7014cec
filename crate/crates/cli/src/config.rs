//! Layered experiment configuration: built-in defaults, then an optional TOML
//! file, then command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cdwce_core::harness::ExperimentConfig;
use toml::{Table, Value};

/// Reads a config file. A saved report is accepted too, in which case its
/// `[config]` echo is used, so any report can be rerun as-is.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut file: Table = toml::from_str(&text).with_context(|| format!("{} is not valid TOML", path.display()))?;
    if file.contains_key("runs") || file.contains_key("experiment_id") {
        file = match file.remove("config") {
            Some(Value::Table(t)) => t,
            _ => bail!("{}: report has no [config] table", path.display()),
        };
    }
    let mut merged = Table::try_from(ExperimentConfig::default())?;
    merge(&mut merged, file);
    merged
        .try_into()
        .with_context(|| format!("invalid configuration in {}", path.display()))
}

fn merge(base: &mut Table, overlay: Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            // A different data-source variant replaces the default one.
            (Some(Value::Table(b)), Value::Table(o)) if key != "data" || same_variant(b, &o) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn same_variant(a: &Table, b: &Table) -> bool {
    a.keys().eq(b.keys())
}
