//! Running scenarios: all runs of one scenario in parallel, sweeps one
//! variant after another.

use rayon::prelude::*;

use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::Simulation;
use crate::mobility::StreetMap;
use crate::report::ScenarioReport;

fn load_map(cfg: &ScenarioConfig) -> Result<Option<StreetMap>, ConfigError> {
    cfg.map.as_ref().map(|p| StreetMap::load(p).map_err(ConfigError::Map)).transpose()
}

/// Runs every run of `cfg`. Run `i` uses seed `seed + i`; results come
/// back in run order whatever the thread scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ConfigError> {
    cfg.validate()?;
    let map = load_map(cfg)?;
    let runs = (0..cfg.runs).into_par_iter().map(|i| Simulation::new(cfg, i, map.clone()).run_to_end()).collect();
    Ok(ScenarioReport { name: cfg.name.clone(), runs })
}

/// Runs every variant of the scenario's sweep table.
pub fn run_sweep(cfg: &ScenarioConfig) -> Result<Vec<ScenarioReport>, ConfigError> {
    cfg.expand().iter().map(run_scenario).collect()
}
