//! Layered configuration: profile defaults, then a TOML file, then
//! environment overrides of the form `AFE_RPB__SECTION__KEY=value`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::control::{CtrlGains, References};
use crate::error::{Error, Result};
use crate::neural::NetConfig;
use crate::plant::{PerUnitBases, Plant, PlantParams};
use crate::rollout::System;
use crate::trainer::{LossConfig, Profile, TrainConfig};

pub const ENV_PREFIX: &str = "AFE_RPB__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpbConfig {
    /// Window threshold relative to h‖L⁻¹‖ in per unit.
    pub eps: f64,
    pub net: NetConfig,
}

impl Default for RpbConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            net: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub plant: PlantParams,
    pub gains: CtrlGains,
    pub references: References,
    pub bases: PerUnitBases,
    pub rpb: RpbConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn defaults(profile: Profile) -> Self {
        Self {
            plant: PlantParams::default(),
            gains: CtrlGains::default(),
            references: References::default(),
            bases: PerUnitBases::default(),
            rpb: RpbConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::profile(profile),
        }
    }

    /// Profile defaults overlaid with `file` (if any) and the process environment.
    pub fn load(file: Option<&Path>, profile: Profile) -> Result<Self> {
        let text = match file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", p.display()))
            })?),
            None => None,
        };
        Self::layered(profile, text.as_deref(), std::env::vars())
    }

    pub fn layered(
        profile: Profile,
        file: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table = Table::try_from(Self::defaults(profile)).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(text) = file {
            let user: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
            merge(&mut table, user);
        }
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            apply_override(&mut table, &key[ENV_PREFIX.len()..], &raw)?;
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        Plant::new(self.plant.clone())?;
        self.gains.validate()?;
        self.bases.validate()?;
        self.rpb.net.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if !(self.rpb.eps > 0.0) {
            return Err(Error::InvalidConfig("rpb.eps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn system(&self) -> Result<System> {
        System::new(
            self.plant.clone(),
            self.gains.clone(),
            self.references,
            self.bases,
            self.loss.clone(),
            self.rpb.eps,
        )
    }
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

/// `key` is `SECTION__FIELD[__FIELD...]`, matched case-insensitively.
fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed override {ENV_PREFIX}{key}")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = match cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::InvalidConfig(format!("override {ENV_PREFIX}{key}: {p} is not a section"))),
        };
    }
    cur.insert(last.clone(), parse_value(raw));
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
