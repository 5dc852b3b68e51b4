//! Server configuration: one JSON file, then `OPENCOURIER_*` environment
//! overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use opencourier_core::assignment::AssignmentPolicy;
use opencourier_core::instance::InstanceConfig;
use opencourier_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceSection {
    #[serde(flatten)]
    pub config: InstanceConfig,
    /// Initial policy, used when the store has none yet.
    #[serde(default)]
    pub policy: Option<AssignmentPolicy>,
    /// Bearer token for this instance's administrator.
    pub admin_token: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Directory for the file-backed store; in-memory when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Registry document (file path or http(s) URL) read at startup.
    #[serde(default)]
    pub registry: Option<String>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Token for registry writes not tied to any hosted instance.
    #[serde(default)]
    pub registry_admin_token: Option<String>,
    pub instances: Vec<InstanceSection>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_rounds() -> usize {
    opencourier_core::quoting::DEFAULT_MAX_ROUNDS
}

fn bad(var: &str, v: &str) -> Error {
    Error::validation(format!("{var}={v} is not valid"))
}

fn parse_var<T: std::str::FromStr>(var: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(var, v))
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        let env: BTreeMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with("OPENCOURIER_")).collect();
        Self::from_json(&text, &env)
    }

    pub fn from_json(text: &str, env: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg: ServerConfig =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_env(&mut self, env: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in env {
            match k.as_str() {
                "OPENCOURIER_BIND" => self.bind = v.clone(),
                "OPENCOURIER_MAX_ROUNDS" => self.max_rounds = parse_var(k, v)?,
                "OPENCOURIER_TIMEZONE" => {
                    let tz: chrono_tz::Tz = parse_var(k, v)?;
                    self.instances.iter_mut().for_each(|i| i.config.matching.timezone = tz);
                }
                "OPENCOURIER_SMALL_BELOW_LBS" => {
                    let x: f64 = parse_var(k, v)?;
                    self.instances.iter_mut().for_each(|i| i.config.matching.small_below_lbs = x);
                }
                "OPENCOURIER_LARGE_FROM_LBS" => {
                    let x: f64 = parse_var(k, v)?;
                    self.instances.iter_mut().for_each(|i| i.config.matching.large_from_lbs = x);
                }
                "OPENCOURIER_STALENESS_SECS" => {
                    let x: u64 = parse_var(k, v)?;
                    self.policies().for_each(|p| p.staleness_secs = x);
                }
                "OPENCOURIER_MAX_ATTEMPTS" => {
                    let x: u32 = parse_var(k, v)?;
                    self.policies().for_each(|p| p.max_attempts = x);
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn policies(&mut self) -> impl Iterator<Item = &mut AssignmentPolicy> {
        self.instances
            .iter_mut()
            .map(|i| i.policy.get_or_insert_with(AssignmentPolicy::default))
    }

    fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::field("maxRounds", "must be at least 1"));
        }
        if self.instances.is_empty() {
            return Err(Error::field("instances", "at least one instance is required"));
        }
        for i in &self.instances {
            i.config.territory.validate()?;
            if i.admin_token.len() < 16 {
                return Err(Error::field("adminToken", "must be at least 16 characters"));
            }
            let m = &i.config.matching;
            if !(m.small_below_lbs >= 0.0 && m.small_below_lbs <= m.large_from_lbs) {
                return Err(Error::field("matching", "order-size thresholds must satisfy 0 <= small <= large"));
            }
            if let Some(p) = &i.policy {
                p.validate()?;
            }
        }
        Ok(())
    }
}
