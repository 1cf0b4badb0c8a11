//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "medium-text"
//! seed = 1
//! width = 1000.0           # metres
//! height = 1000.0
//! duration = 7200.0        # seconds of simulated time
//! step = 1.0               # seconds per tick
//! runs = 10                # run i uses seed + i
//! setup_latency = 0.0      # seconds before a new contact carries data
//! map = "streets.txt"      # optional edge list, see `mobility`
//!
//! [load]
//! interval = 60.0          # one new message every interval seconds
//! ttl = 5400.0
//! size = 16384             # or size = { min = 65000, max = 120000 }
//! first_at = 60.0          # optional, defaults to interval
//! limit = 10               # optional cap on generated messages
//! origin = 0               # optional fixed generating node
//!
//! [[group]]
//! name = "pedestrians"
//! class = "native-mobile"  # native-ap-static | native-ap-mobile | web-mobile
//! count = 20
//! speed = [0.5, 1.5]       # m/s, uniform
//! range = 50.0             # m
//! bitrate = 2000000.0      # bit/s
//! positions = [[0.0, 0.0]] # optional fixed start positions
//!
//! [sweep]                  # optional: expands into one variant per combination
//! intervals = [12.0, 60.0, 300.0]
//! sizes = [350, 16384]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum NodeClass {
    NativeMobile,
    NativeApStatic,
    NativeApMobile,
    WebMobile,
}

impl NodeClass {
    pub fn is_native(self) -> bool {
        self != NodeClass::WebMobile
    }

    pub fn is_ap(self) -> bool {
        matches!(self, NodeClass::NativeApStatic | NodeClass::NativeApMobile)
    }

    /// Native nodes carried by people create content; static access points
    /// only relay and serve.
    pub fn generates(self) -> bool {
        matches!(self, NodeClass::NativeMobile | NodeClass::NativeApMobile)
    }

    pub fn is_static(self) -> bool {
        self == NodeClass::NativeApStatic
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SizeModel {
    Constant(u64),
    Range { min: u64, max: u64 },
}

impl SizeModel {
    pub fn label(&self) -> String {
        match self {
            SizeModel::Constant(n) => n.to_string(),
            SizeModel::Range { min, max } => format!("{min}-{max}"),
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub interval: f64,
    pub ttl: f64,
    pub size: SizeModel,
    #[serde(default)]
    pub first_at: Option<f64>,
    #[serde(default)]
    pub limit: Option<u64>,
    #[serde(default)]
    pub origin: Option<usize>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub class: NodeClass,
    pub count: usize,
    #[serde(default)]
    pub speed: (f64, f64),
    pub range: f64,
    #[serde(default = "default_bitrate")]
    pub bitrate: f64,
    #[serde(default)]
    pub positions: Vec<(f64, f64)>,
}

fn default_bitrate() -> f64 {
    2_000_000.0
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub intervals: Vec<f64>,
    #[serde(default)]
    pub sizes: Vec<SizeModel>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub duration: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub setup_latency: f64,
    #[serde(default)]
    pub map: Option<PathBuf>,
    pub load: LoadConfig,
    #[serde(rename = "group")]
    pub groups: Vec<GroupConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_step() -> f64 {
    1.0
}
fn default_runs() -> u32 {
    1
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read scenario {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("{0} must be positive")]
    NotPositive(String),
    #[error("{0} must not be negative")]
    Negative(String),
    #[error("group {0}: speed range must satisfy 0 <= min <= max")]
    SpeedRange(String),
    #[error("group {0}: static access points cannot move")]
    StaticMoves(String),
    #[error("group {0}: {1} fixed positions for {2} nodes")]
    Positions(String, usize, usize),
    #[error("group {0}: position outside the area")]
    OutsideArea(String),
    #[error("duplicate group name {0}")]
    DuplicateGroup(String),
    #[error("no node can generate messages")]
    NoGenerators,
    #[error("load.origin {0} is not a generating node")]
    BadOrigin(usize),
    #[error("message size range {0}..{1} is empty")]
    SizeRange(u64, u64),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("map: {0}")]
    Map(String),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file. A relative `map` path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(map), Some(dir)) = (&cfg.map, path.parent()) {
            if map.is_relative() {
                cfg.map = Some(dir.join(map));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::NotPositive(what.to_owned()))
            }
        };
        positive(self.width, "width")?;
        positive(self.height, "height")?;
        positive(self.duration, "duration")?;
        positive(self.step, "step")?;
        positive(self.load.interval, "load.interval")?;
        positive(self.load.ttl, "load.ttl")?;
        if !(self.setup_latency >= 0.0 && self.setup_latency.is_finite()) {
            return Err(ConfigError::Negative("setup_latency".into()));
        }
        if let Some(first) = self.load.first_at {
            if !(first >= 0.0 && first.is_finite()) {
                return Err(ConfigError::Negative("load.first_at".into()));
            }
        }
        if self.runs == 0 {
            return Err(ConfigError::NoRuns);
        }
        let sizes = std::iter::once(&self.load.size).chain(self.sweep.iter().flat_map(|s| &s.sizes));
        for size in sizes {
            match *size {
                SizeModel::Constant(0) => return Err(ConfigError::NotPositive("load.size".into())),
                SizeModel::Range { min, max } if min == 0 || min > max => return Err(ConfigError::SizeRange(min, max)),
                _ => {}
            }
        }
        if let Some(sweep) = &self.sweep {
            for i in &sweep.intervals {
                positive(*i, "sweep.intervals")?;
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return Err(ConfigError::DuplicateGroup(g.name.clone()));
            }
            positive(g.range, &format!("group {} range", g.name))?;
            positive(g.bitrate, &format!("group {} bitrate", g.name))?;
            let (lo, hi) = g.speed;
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(ConfigError::SpeedRange(g.name.clone()));
            }
            if g.class.is_static() && hi > 0.0 {
                return Err(ConfigError::StaticMoves(g.name.clone()));
            }
            if !g.positions.is_empty() && g.positions.len() != g.count {
                return Err(ConfigError::Positions(g.name.clone(), g.positions.len(), g.count));
            }
            let inside = |&(x, y): &(f64, f64)| (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y);
            if !g.positions.iter().all(inside) {
                return Err(ConfigError::OutsideArea(g.name.clone()));
            }
        }
        let generators = self.generator_count();
        if generators == 0 {
            return Err(ConfigError::NoGenerators);
        }
        if let Some(origin) = self.load.origin {
            if self.node_classes().get(origin).map_or(true, |c| !c.generates()) {
                return Err(ConfigError::BadOrigin(origin));
            }
        }
        Ok(())
    }

    /// Class of every node, in group order.
    pub fn node_classes(&self) -> Vec<NodeClass> {
        self.groups.iter().flat_map(|g| std::iter::repeat(g.class).take(g.count)).collect()
    }

    fn generator_count(&self) -> usize {
        self.groups.iter().filter(|g| g.class.generates()).map(|g| g.count).sum()
    }

    /// Seed of run `i`.
    pub fn run_seed(&self, i: u32) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// One scenario per (interval, size) combination of the `[sweep]`
    /// table, or just this scenario without one.
    pub fn expand(&self) -> Vec<ScenarioConfig> {
        let Some(sweep) = &self.sweep else {
            return vec![self.clone()];
        };
        let intervals = if sweep.intervals.is_empty() { vec![self.load.interval] } else { sweep.intervals.clone() };
        let sizes = if sweep.sizes.is_empty() { vec![self.load.size] } else { sweep.sizes.clone() };
        let mut out = Vec::new();
        for &interval in &intervals {
            for size in &sizes {
                let mut v = self.clone();
                v.sweep = None;
                v.load.interval = interval;
                v.load.first_at = self.load.first_at;
                v.load.size = *size;
                v.name = format!("{}/interval={}/size={}", self.name, interval, size.label());
                out.push(v);
            }
        }
        out
    }
}
