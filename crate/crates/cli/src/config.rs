//! Run configuration: a TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use pedgnn::model::PedGnnConfig;
use pedgnn::synthgen::GeneratorConfig;
use pedgnn::train::TrainPlan;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub name: String,
    pub path: PathBuf,
}

/// Dataset lists per split. An empty list falls back to the generator
/// output `<out_dir>/data/<split>.jsonl`, named `S`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Vec<DataSource>,
    pub val: Vec<DataSource>,
    pub test: Vec<DataSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Without a checkpoint a seeded default-config model is timed.
    pub checkpoint: Option<PathBuf>,
    /// Window length; defaults to the model's N_F.
    pub n_f: Option<usize>,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { checkpoint: None, n_f: None, repetitions: 1000, warmup: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub generate: GeneratorConfig,
    pub data: DataConfig,
    pub model: PedGnnConfig,
    pub train: TrainPlan,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("runs/default"),
            generate: GeneratorConfig::default(),
            data: DataConfig::default(),
            model: PedGnnConfig::default(),
            train: TrainPlan::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn sources(&self, split: &str) -> Vec<DataSource> {
        let listed = match split {
            "train" => &self.data.train,
            "val" => &self.data.val,
            _ => &self.data.test,
        };
        if listed.is_empty() {
            vec![DataSource { name: "S".into(), path: self.out_dir.join("data").join(format!("{split}.jsonl")) }]
        } else {
            listed.clone()
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.eval.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the optional config file, applies overrides in order, and
/// deserializes with unknown keys rejected.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Core(pedgnn::Error::io(p, e)))?;
            text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    RunConfig::deserialize(Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}
