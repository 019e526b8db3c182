//! Run configuration: a flat map of dotted keys with typed defaults.
//!
//! Files may be TOML or JSON; nested tables are flattened, so
//! `[source]\nlambda = 0.2` and `"source.lambda" = 0.2` are the same key.
//! Flags and `--set key=value` pairs override file values. The resolved map
//! serialises with sorted keys, which is what the digest is taken over.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    FloatList,
    Int,
    IntList,
    Str,
    Bool,
    /// A float list or the string `mean`.
    Target,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: fn() -> Value,
}

macro_rules! key {
    ($name:literal, $kind:ident, $default:expr) => {
        Key { name: $name, kind: Kind::$kind, default: || json!($default) }
    };
}

const SCHEMA: &[Key] = &[
    key!("b", Target, "mean"),
    key!("t", Int, 10),
    key!("t_cap", Int, 12),
    key!("seed", Int, 2024),
    key!("region.capacities", FloatList, [1.0, 1.0]),
    key!("policy.kind", Str, "wc-max-weight"),
    key!("policy.weights", FloatList, Vec::<f64>::new()),
    key!("policy.order", IntList, Vec::<u64>::new()),
    key!("source.kind", Str, "compound-poisson"),
    key!("source.lambda", FloatList, [0.3]),
    key!("source.mu", FloatList, [0.01]),
    key!("source.nu", FloatList, [2.0]),
    key!("source.mean", FloatList, [0.5]),
    key!("ratefn.method", Str, "branch-convex"),
    key!("ratefn.j", Bool, false),
    key!("grid.delta", Float, 0.05),
    key!("grid.max_states", Int, 4_000_000),
    key!("mc.L", IntList, [10, 20, 40, 80]),
    key!("mc.T", Int, 4),
    key!("mc.B", FloatList, Vec::<f64>::new()),
    key!("mc.replicates", Int, 100_000),
    // Face search for the reference exponent: width and points per axis.
    key!("mc.span", Float, 2.0),
    key!("mc.points", Int, 5),
    key!("compare.grid", Str, "0:5:0.5"),
    key!("oracle.delta", Float, 0.02),
    key!("trajectory.arrivals", Str, ""),
    key!("output.path", Str, ""),
    key!("output.csv", Str, ""),
    key!("output.trajectory", Str, ""),
];

fn schema(name: &str) -> Option<&'static Key> {
    SCHEMA.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, Value> = SCHEMA.iter().map(|k| (k.name.to_string(), (k.default)())).collect();
        if let Some(path) = file {
            for (name, v) in read_file(path)? {
                let key = schema(&name).ok_or_else(|| CliError::Config(format!("unknown key `{name}`")))?;
                values.insert(name, normalise(key, v)?);
            }
        }
        for (name, text) in overrides {
            let key = schema(name).ok_or_else(|| CliError::Config(format!("unknown key `{name}`")))?;
            values.insert(name.clone(), parse_flag(key, text)?);
        }
        Ok(Self { values })
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    /// Hex SHA-256 of the compact JSON form (sorted keys).
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.values).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn get(&self, name: &str) -> &Value {
        self.values.get(name).unwrap_or_else(|| panic!("key {name} missing from schema"))
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.get(name).as_f64().expect("validated float")
    }

    pub fn f64s(&self, name: &str) -> Vec<f64> {
        self.get(name).as_array().expect("validated list").iter().map(|v| v.as_f64().expect("float")).collect()
    }

    pub fn usize(&self, name: &str) -> usize {
        self.get(name).as_u64().expect("validated integer") as usize
    }

    pub fn u64s(&self, name: &str) -> Vec<u64> {
        self.get(name).as_array().expect("validated list").iter().map(|v| v.as_u64().expect("integer")).collect()
    }

    pub fn str(&self, name: &str) -> &str {
        self.get(name).as_str().expect("validated string")
    }

    pub fn bool(&self, name: &str) -> bool {
        self.get(name).as_bool().expect("validated bool")
    }

    /// `None` for `mean`.
    pub fn target(&self, name: &str) -> Option<Vec<f64>> {
        match self.get(name) {
            Value::String(_) => None,
            _ => Some(self.f64s(name)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<(String, Value)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let root: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?
    };
    let mut out = Vec::new();
    flatten("", root, &mut out)?;
    Ok(out)
}

fn flatten(prefix: &str, v: Value, out: &mut Vec<(String, Value)>) -> Result<(), CliError> {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let name = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&name, v, out)?;
            }
            Ok(())
        }
        _ if prefix.is_empty() => Err(CliError::Config("configuration must be a table".into())),
        v => {
            out.push((prefix.to_string(), v));
            Ok(())
        }
    }
}

fn type_error(key: &Key, v: &Value) -> CliError {
    CliError::Config(format!("`{}` expects {:?}, got {v}", key.name, key.kind))
}

fn as_float(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite())
}

/// Checks a file value against the key's type; scalars become one-element
/// lists for list keys.
fn normalise(key: &Key, v: Value) -> Result<Value, CliError> {
    let err = || type_error(key, &v);
    let floats = |v: &Value| -> Option<Vec<f64>> {
        match v {
            Value::Array(a) => a.iter().map(as_float).collect(),
            x => as_float(x).map(|f| vec![f]),
        }
    };
    let ints = |v: &Value| -> Option<Vec<u64>> {
        match v {
            Value::Array(a) => a.iter().map(Value::as_u64).collect(),
            x => x.as_u64().map(|i| vec![i]),
        }
    };
    Ok(match key.kind {
        Kind::Float => json!(as_float(&v).ok_or_else(err)?),
        Kind::FloatList => json!(floats(&v).ok_or_else(err)?),
        Kind::Int => json!(v.as_u64().ok_or_else(err)?),
        Kind::IntList => json!(ints(&v).ok_or_else(err)?),
        Kind::Str => json!(v.as_str().ok_or_else(err)?),
        Kind::Bool => json!(v.as_bool().ok_or_else(err)?),
        Kind::Target => match &v {
            Value::String(s) if s == "mean" => v.clone(),
            Value::String(s) => json!(parse_floats(s).ok_or_else(err)?),
            _ => json!(floats(&v).ok_or_else(err)?),
        },
    })
}

fn parse_floats(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse::<f64>().ok().filter(|f| f.is_finite())).collect()
}

fn parse_ints(s: &str) -> Option<Vec<u64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse::<u64>().ok()).collect()
}

fn parse_flag(key: &Key, text: &str) -> Result<Value, CliError> {
    let err = || CliError::Config(format!("`{}` expects {:?}, got `{text}`", key.name, key.kind));
    let t = text.trim();
    Ok(match key.kind {
        Kind::Float => json!(t.parse::<f64>().ok().filter(|f| f.is_finite()).ok_or_else(err)?),
        Kind::FloatList => json!(parse_floats(t).ok_or_else(err)?),
        Kind::Int => json!(t.parse::<u64>().map_err(|_| err())?),
        Kind::IntList => json!(parse_ints(t).ok_or_else(err)?),
        Kind::Str => json!(t),
        Kind::Bool => json!(t.parse::<bool>().map_err(|_| err())?),
        Kind::Target if t == "mean" => json!("mean"),
        Kind::Target => json!(parse_floats(t).ok_or_else(err)?),
    })
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.to_string()))
}
