//! Effective run configuration: preset, then config file, then flags.

use std::path::Path;

use epr_core::io::config_hash;
use epr_core::sim::SimConfig;
use epr_core::{Error, ExecPolicy, Result};
use serde::Serialize;

use crate::Common;

/// Everything that determines a run's artifacts. Its TOML form is hashed into
/// every output header; thread count is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: String,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn text(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.text())
    }
}

fn preset(name: &str) -> Result<SimConfig> {
    match name {
        "desk" => Ok(SimConfig::default()),
        "tiny" => Ok(SimConfig::tiny()),
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (expected desk or tiny)"
        ))),
    }
}

/// Overlays `user` on `base`, rejecting keys `base` does not know.
fn overlay(base: &mut toml::Table, user: toml::Table) -> Result<()> {
    // optional fields are absent from the serialized base
    const OPTIONAL: &[&str] = &["r3"];
    for (k, v) in user {
        if !base.contains_key(&k) && !OPTIONAL.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown key sim.{k}")));
        }
        base.insert(k, v);
    }
    Ok(())
}

pub fn load(common: &Common) -> Result<RunConfig> {
    let mut file = match &common.config {
        Some(path) => read_file(path)?,
        None => toml::Table::new(),
    };
    let mut take = |key: &str| file.remove(key);
    let file_seed = take("seed");
    let file_preset = take("preset");
    let file_sim = take("sim");
    if let Some(k) = file.keys().next() {
        return Err(Error::Config(format!("unknown key {k}")));
    }

    let preset_name = match (&common.preset, file_preset) {
        (Some(p), _) => p.clone(),
        (None, Some(toml::Value::String(p))) => p,
        (None, Some(other)) => {
            return Err(Error::Config(format!("preset must be a string, found {other}")))
        }
        (None, None) => "desk".to_string(),
    };
    let mut sim = preset(&preset_name)?;
    if let Some(user) = file_sim {
        let toml::Value::Table(user) = user else {
            return Err(Error::Config("sim must be a table".into()));
        };
        let mut base = toml::Table::try_from(&sim).map_err(|e| Error::Config(e.to_string()))?;
        overlay(&mut base, user)?;
        sim = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
    }

    let seed = match (common.seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(toml::Value::Integer(s))) if s >= 0 => s as u64,
        (None, Some(other)) => {
            return Err(Error::Config(format!("seed must be a non-negative integer, found {other}")))
        }
        (None, None) => {
            return Err(Error::Config(
                "a seed is required (--seed or `seed` in the config file)".into(),
            ))
        }
    };
    sim.seed = seed;
    if let Some(v) = common.reps {
        sim.epr_reps = v;
    }
    if let Some(v) = common.chains {
        sim.mcmc_chains = v;
    }
    if let Some(v) = common.iters {
        sim.mcmc_iters = v;
    }
    if let Some(v) = common.burnin {
        sim.mcmc_burnin = v;
    }
    if let Some(v) = common.alpha_xi {
        sim.alpha_xi = v;
    }
    if let Some(v) = common.replicates {
        sim.n_replicates = v;
    }
    if let Some(v) = common.discrepancy {
        sim.discrepancy = v;
    }
    sim.validate()?;
    Ok(RunConfig {
        seed,
        preset: preset_name,
        sim,
    })
}

fn read_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))
}

/// `EPR_THREADS` wins over `--threads`; 0 means all cores.
pub fn policy(flag: Option<usize>) -> Result<ExecPolicy> {
    let threads = match std::env::var("EPR_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("EPR_THREADS={v:?} is not a thread count")))?,
        Err(_) => flag.unwrap_or(0),
    };
    Ok(ExecPolicy::new(threads))
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
