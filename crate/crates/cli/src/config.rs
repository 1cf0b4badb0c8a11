//! Node configuration.
//!
//! Values come from four layers; later layers win:
//!
//! 1. built-in defaults
//! 2. environment variables (`OPPWEB_DATA_DIR`, `OPPWEB_PORTAL_ADDR`, ...)
//! 3. the config file given with `--config`
//! 4. command-line flags
//!
//! The file is TOML:
//!
//! ```toml
//! node_name = "camp-1"
//! data_dir = "data"            # relative paths resolve against the file
//! portal_addr = "0.0.0.0:8080"
//! sync_addr = "0.0.0.0:4556"
//! peers = ["10.0.0.7:4556"]
//! key = "node.key"
//! ttl = 5400
//! dial_interval = 30
//! sweep_interval = 60
//! static_dir = "ui"            # optional extra files served under /static
//!
//! [budget]
//! cpu_ms = 2000
//! memory_bytes = 67108864
//! output_bytes = 1048576
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use oppweb_core::message::DEFAULT_TTL;
use oppweb_core::sandbox::ExecutionBudget;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "OPPWEB_";

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetLayer {
    pub cpu_ms: Option<u64>,
    pub memory_bytes: Option<usize>,
    pub output_bytes: Option<usize>,
}

/// One configuration layer; unset fields defer to lower layers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub node_name: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub portal_addr: Option<String>,
    pub sync_addr: Option<String>,
    pub peers: Option<Vec<String>>,
    pub key: Option<PathBuf>,
    pub ttl: Option<u64>,
    pub dial_interval: Option<u64>,
    pub sweep_interval: Option<u64>,
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub budget: BudgetLayer,
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| CliError::Config(format!("{ENV_PREFIX}{name}: cannot parse {value:?}")))
}

impl ConfigLayer {
    /// Reads `OPPWEB_*` variables from `vars`.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut l = ConfigLayer::default();
        for (k, v) in vars {
            let Some(name) = k.strip_prefix(ENV_PREFIX) else { continue };
            match name {
                "NODE_NAME" => l.node_name = Some(v),
                "DATA_DIR" => l.data_dir = Some(v.into()),
                "PORTAL_ADDR" => l.portal_addr = Some(v),
                "SYNC_ADDR" => l.sync_addr = Some(v),
                "PEERS" => l.peers = Some(v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()),
                "KEY" => l.key = Some(v.into()),
                "STATIC_DIR" => l.static_dir = Some(v.into()),
                "TTL" => l.ttl = Some(parse_env(name, &v)?),
                "DIAL_INTERVAL" => l.dial_interval = Some(parse_env(name, &v)?),
                "SWEEP_INTERVAL" => l.sweep_interval = Some(parse_env(name, &v)?),
                "CPU_MS" => l.budget.cpu_ms = Some(parse_env(name, &v)?),
                "MEMORY_BYTES" => l.budget.memory_bytes = Some(parse_env(name, &v)?),
                "OUTPUT_BYTES" => l.budget.output_bytes = Some(parse_env(name, &v)?),
                // other tools may share the prefix
                _ => {}
            }
        }
        Ok(l)
    }

    /// Parses a config file. Relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut l: ConfigLayer = toml::from_str(text).map_err(CliError::config)?;
        for p in [&mut l.data_dir, &mut l.key, &mut l.static_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(l)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// `self` overridden by every field set in `top`.
    pub fn merge(self, top: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            node_name: top.node_name.or(self.node_name),
            data_dir: top.data_dir.or(self.data_dir),
            portal_addr: top.portal_addr.or(self.portal_addr),
            sync_addr: top.sync_addr.or(self.sync_addr),
            peers: top.peers.or(self.peers),
            key: top.key.or(self.key),
            ttl: top.ttl.or(self.ttl),
            dial_interval: top.dial_interval.or(self.dial_interval),
            sweep_interval: top.sweep_interval.or(self.sweep_interval),
            static_dir: top.static_dir.or(self.static_dir),
            budget: BudgetLayer {
                cpu_ms: top.budget.cpu_ms.or(self.budget.cpu_ms),
                memory_bytes: top.budget.memory_bytes.or(self.budget.memory_bytes),
                output_bytes: top.budget.output_bytes.or(self.budget.output_bytes),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeConfig {
    pub node_name: String,
    pub data_dir: PathBuf,
    pub portal_addr: SocketAddr,
    pub sync_addr: SocketAddr,
    pub peers: Vec<String>,
    pub key: PathBuf,
    pub ttl: u64,
    pub dial_interval: Duration,
    pub sweep_interval: Duration,
    pub static_dir: Option<PathBuf>,
    pub budget: ExecutionBudget,
}

fn addr(what: &str, s: &str) -> Result<SocketAddr> {
    s.parse().map_err(|_| CliError::Config(format!("{what} {s:?} is not an ip:port address")))
}

impl NodeConfig {
    /// Resolves layers (lowest first) into a checked configuration.
    pub fn resolve(env: ConfigLayer, file: ConfigLayer, flags: ConfigLayer) -> Result<Self> {
        let l = env.merge(file).merge(flags);
        let data_dir = l.data_dir.unwrap_or_else(|| PathBuf::from("oppweb-data"));
        let defaults = ExecutionBudget::default();
        let budget = ExecutionBudget {
            cpu_time: l.budget.cpu_ms.map(Duration::from_millis).unwrap_or(defaults.cpu_time),
            memory_bytes: l.budget.memory_bytes.unwrap_or(defaults.memory_bytes),
            output_bytes: l.budget.output_bytes.unwrap_or(defaults.output_bytes),
        };
        budget.validate().map_err(CliError::Config)?;
        let cfg = NodeConfig {
            node_name: l.node_name.unwrap_or_else(|| "oppweb".into()),
            portal_addr: addr("portal_addr", l.portal_addr.as_deref().unwrap_or("127.0.0.1:8080"))?,
            sync_addr: addr("sync_addr", l.sync_addr.as_deref().unwrap_or("0.0.0.0:4556"))?,
            peers: l.peers.unwrap_or_default(),
            key: l.key.unwrap_or_else(|| data_dir.join("node.key")),
            ttl: l.ttl.unwrap_or(DEFAULT_TTL),
            dial_interval: Duration::from_secs(l.dial_interval.unwrap_or(30)),
            sweep_interval: Duration::from_secs(l.sweep_interval.unwrap_or(60)),
            static_dir: l.static_dir,
            data_dir,
            budget,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.ttl == 0 {
            return Err(CliError::Config("ttl must be positive".into()));
        }
        if self.dial_interval.is_zero() || self.sweep_interval.is_zero() {
            return Err(CliError::Config("intervals must be positive".into()));
        }
        // port 0 asks the system for a free port, so two zeros never clash
        if self.portal_addr == self.sync_addr && self.portal_addr.port() != 0 {
            return Err(CliError::Config(format!("portal and sync both use {}", self.portal_addr)));
        }
        Ok(())
    }

    /// Creates the data directory if needed and checks it is writable.
    pub fn prepare_data_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.data_dir).map_err(|e| CliError::Storage(format!("{}: {e}", self.data_dir.display())))?;
        let probe = self.data_dir.join(".write-test");
        std::fs::write(&probe, b"").and_then(|_| std::fs::remove_file(&probe)).map_err(|e| {
            CliError::Storage(format!("{} is not writable: {e}", self.data_dir.display()))
        })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.data_dir.join("cache")
    }
}
