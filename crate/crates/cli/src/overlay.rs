//! Config files overlaid with command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Keys from `file` (TOML) replaced by every flag that was given.
pub fn merged_table<F: Serialize>(file: Option<&Path>, flags: &F) -> Result<toml::Table> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    table.extend(toml::Table::try_from(flags).context("collecting flags")?);
    Ok(table)
}

pub fn resolve<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    Ok(T::deserialize(toml::Value::Table(table))?)
}
