//! Discrete-time simulator for opportunistic message dissemination among
//! native nodes, access points and web clients.
//!
//! ```no_run
//! let cfg = oppweb_sim::ScenarioConfig::load("scenarios/overhead.toml".as_ref()).unwrap();
//! let report = oppweb_sim::run_scenario(&cfg).unwrap();
//! println!("{:?}", report.native_coverage());
//! ```

pub mod config;
pub mod crosscheck;
pub mod engine;
pub mod mobility;
pub mod report;
pub mod sweep;

pub use config::{ConfigError, GroupConfig, LoadConfig, NodeClass, ScenarioConfig, SizeModel, SweepConfig};
pub use crosscheck::{cross_check, CrossCheck};
pub use engine::{MessageStats, RunReport, SimMessage, Simulation, TransferRecord};
pub use mobility::StreetMap;
pub use report::{write_messages_csv, write_summary_csv, write_transfers_csv, ScenarioReport};
pub use sweep::{run_scenario, run_sweep};
