use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::analysis::AnalysisConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::grounding::CaclConfig;
use crate::trainer::{Method, TrainConfig};

/// Environment variable naming the default root for run artifacts.
pub const OUTPUT_ROOT_VAR: &str = "EMCOMM_OUT";

/// Names accepted by `--config` in place of a file path.
pub const PRESETS: &[&str] = &[
    "pp_cacl",
    "pp_ae_comm",
    "pp_no_comm",
    "pp_small_cacl",
    "pp_small_ae_comm",
    "pp_small_no_comm",
    "tj_cacl",
    "tj_ae_comm",
    "tj_no_comm",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Run artifacts go under `<output_dir>/<name>/seed_<seed>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { name: "run".into(), seeds: vec![0], output_dir: None }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub cacl: CaclConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn new(name: &str, method: Method, env: EnvConfig) -> Self {
        RunConfig {
            run: RunSection { name: name.into(), ..Default::default() },
            train: TrainConfig { method, ..Default::default() },
            env,
            cacl: CaclConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        let (env, method) = if let Some(m) = name.strip_prefix("pp_small_") {
            (EnvConfig::predator_prey_small(), m)
        } else if let Some(m) = name.strip_prefix("pp_") {
            (EnvConfig::predator_prey(), m)
        } else if let Some(m) = name.strip_prefix("tj_") {
            (EnvConfig::traffic_junction(), m)
        } else {
            return None;
        };
        let method = match method {
            "cacl" => Method::Cacl,
            "ae_comm" => Method::AeComm,
            "no_comm" => Method::NoComm,
            _ => return None,
        };
        Some(RunConfig::new(name, method, env))
    }

    /// Parses TOML text. Omitted keys take their defaults; `[env]` may name a
    /// `preset` (`predator_prey`, `predator_prey_small`, `traffic_junction`)
    /// whose values the remaining keys override. Unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        Self::from_table(table)
    }

    fn from_table(mut table: Table) -> Result<Self> {
        let env_base = match table.get_mut("env").and_then(Value::as_table_mut) {
            Some(env) => base_env(env)?,
            None => EnvConfig::default(),
        };
        let method = match table.get("train").and_then(|t| t.get("method")) {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Config("train.method must be a string".into()))?
                .parse()?,
            None => Method::Cacl,
        };
        let mut resolved = RunConfig::new("run", method, env_base).to_table()?;
        overlay(&mut resolved, table, "")?;
        let cfg: RunConfig = Value::Table(resolved)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, or a built-in preset when `spec` is a preset name.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml(&text);
        }
        Self::preset(spec).ok_or_else(|| {
            Error::Config(format!("`{spec}` is neither a config file nor a preset ({})", PRESETS.join(", ")))
        })
    }

    /// Applies `section.key=value` overrides. Values parse as TOML, falling
    /// back to a bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = self.to_table()?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{key}` needs a section, e.g. train.lr")))?;
            let Some(sec) = table.get_mut(section).and_then(Value::as_table_mut) else {
                return Err(Error::Config(format!("unknown section `{section}` in override `{key}`")));
            };
            if !sec.contains_key(field) && !(section == "run" && field == "output_dir") {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            sec.insert(field.to_string(), value);
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run.name `{}` is not a plain directory name", self.run.name)));
        }
        self.train.validate()?;
        self.env.validate()?;
        self.cacl.validate()?;
        self.analysis.validate()
    }

    pub fn to_table(&self) -> Result<Table> {
        match Value::try_from(self) {
            Ok(Value::Table(t)) => Ok(t),
            Ok(_) => unreachable!("config serializes to a table"),
            Err(e) => Err(Error::Config(format!("cannot serialize config: {e}"))),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Root directory for artifacts: the config's `output_dir`, else the
    /// `EMCOMM_OUT` environment variable, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.run
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_root().join(&self.run.name).join(format!("seed_{seed}"))
    }

    /// The same config restricted to one seed, as written next to the run.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.run.seeds = vec![seed];
        c
    }
}

fn base_env(env: &mut Table) -> Result<EnvConfig> {
    if let Some(p) = env.remove("preset") {
        return match p.as_str() {
            Some("predator_prey") => Ok(EnvConfig::predator_prey()),
            Some("predator_prey_small") => Ok(EnvConfig::predator_prey_small()),
            Some("traffic_junction") => Ok(EnvConfig::traffic_junction()),
            _ => Err(Error::Config(format!("unknown env.preset {p}"))),
        };
    }
    Ok(match env.get("kind").and_then(Value::as_str) {
        Some("traffic_junction") => EnvConfig::traffic_junction(),
        _ => EnvConfig::predator_prey(),
    })
}

fn overlay(base: &mut Table, user: Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => overlay(b, u, &path)?,
            (Some(Value::Table(_)), _) => return Err(Error::Config(format!("`{path}` must be a section"))),
            (Some(slot), v) => *slot = v,
            (None, v) if path == "run.output_dir" => {
                base.insert(k, v);
            }
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
