//! Config loading: TOML file, `key=value` overrides, then typed validation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use stacknash::config::ProblemConfig;
use toml::{Table, Value};

use crate::Violation;

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string so `hum.penalty=regularized` works without quotes.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn apply_override(doc: &mut Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!(Violation(format!("override `{spec}` is not of the form key=value")));
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|s| s.is_empty()) {
        bail!(Violation(format!("override key `{key}` has an empty segment")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = doc;
    for seg in parents {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => bail!(Violation(format!("override `{key}`: `{seg}` is not a table"))),
        };
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub struct Loaded {
    pub config: ProblemConfig,
    /// SHA-256 of the effective config, serialized canonically.
    pub hash: String,
}

pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: Table = text
        .parse()
        .map_err(|e| Violation(format!("config {} is not valid TOML: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut config: ProblemConfig = Value::Table(doc)
        .try_into()
        .map_err(|e| Violation(format!("config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        config.run.seed = s;
    }
    let canonical = toml::to_string(&config).context("serializing config")?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(Loaded { config, hash })
}
