//! Plain-text (TOML) configuration documents with layered overrides.
//!
//! Precedence, lowest first: built-in default, document, environment,
//! explicit overrides (command-line flags). An environment variable
//! `ROBUSTHIDE_<KEY>` sets a top-level key; nested keys join sections with a
//! double underscore, e.g. `ROBUSTHIDE_WEIGHTS__ALPHA=0.1`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "ROBUSTHIDE_";

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(config_err)
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(config_err)
}

/// Parses a scalar or array literal; bare words become strings.
pub fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `path` (already split into segments) in `table`.
fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| config_err("empty key"))?;
    let mut cursor = table;
    for seg in parents {
        cursor = match cursor.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(config_err(format!("key '{seg}' is not a section"))),
        };
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

fn has_path(table: &Table, path: &[String]) -> bool {
    match path.split_first() {
        None => true,
        Some((head, rest)) => match table.get(head) {
            Some(Value::Table(t)) => has_path(t, rest),
            Some(_) => rest.is_empty(),
            None => false,
        },
    }
}

/// One override: a dotted key and its value.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

impl Override {
    pub fn new(key: impl Into<String>, value: impl Into<Value>) -> Self {
        Self { key: key.into(), value: value.into() }
    }

    /// Parses `key=value`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (k, v) = spec.split_once('=').ok_or_else(|| config_err(format!("expected key=value, got '{spec}'")))?;
        Ok(Self { key: k.trim().to_string(), value: parse_literal(v.trim()) })
    }
}

/// Env-derived overrides for keys that exist in `known`.
fn env_overrides(known: &Table, env: impl IntoIterator<Item = (String, String)>) -> Vec<(Vec<String>, Value)> {
    let mut out: Vec<(Vec<String>, Value)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            has_path(known, &path).then(|| (path, parse_literal(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Resolves a configuration of type `T` from its layers.
pub fn resolve<T: DeserializeOwned + Serialize + Default>(
    document: Option<&str>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[Override],
) -> Result<T> {
    let mut table = match Value::try_from(T::default()).map_err(config_err)? {
        Value::Table(t) => t,
        _ => return Err(config_err("configuration must be a table")),
    };
    if let Some(text) = document {
        let file: Table = toml::from_str(text).map_err(config_err)?;
        merge(&mut table, file);
    }
    for (path, value) in env_overrides(&table.clone(), env) {
        set_path(&mut table, &path, value)?;
    }
    for o in overrides {
        let path: Vec<String> = o.key.split('.').map(str::to_string).collect();
        set_path(&mut table, &path, o.value.clone())?;
    }
    Value::Table(table).try_into().map_err(config_err)
}

/// [`resolve`] with the document read from `path` and the process environment.
pub fn load<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>, overrides: &[Override]) -> Result<T> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve(text.as_deref(), std::env::vars(), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    #[test]
    fn layers_apply_in_order() {
        let doc = "batch_size = 8\nsteps = 3\n[weights]\nalpha = 0.5\n";
        let env = vec![
            ("ROBUSTHIDE_STEPS".to_string(), "7".to_string()),
            ("ROBUSTHIDE_WEIGHTS__GAMMA".to_string(), "2".to_string()),
            ("ROBUSTHIDE_UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg: TrainConfig = resolve(Some(doc), env, &[Override::new("steps", 9)]).unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.steps, 9);
        assert_eq!(cfg.weights.alpha, 0.5);
        assert_eq!(cfg.weights.gamma, 2.0);
        assert_eq!(cfg.learning_rate, 2e-4);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let r: Result<TrainConfig> = resolve(Some("bogus = 1"), Vec::new(), &[]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = TrainConfig { steps: 12, ..Default::default() };
        let text = to_toml(&cfg).unwrap();
        let back: TrainConfig = resolve(Some(&text), Vec::new(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn literals() {
        assert_eq!(parse_literal("0.5"), Value::Float(0.5));
        assert_eq!(parse_literal("[1, 2]"), Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert_eq!(parse_literal("mask"), Value::String("mask".into()));
        assert_eq!(Override::parse("attack.rng_seed=3").unwrap(), Override::new("attack.rng_seed", 3));
    }
}
