//! The `oppweb` operator tool: node daemon, manual sync, message and key
//! handling, bundle packing and simulator runs.

pub mod commands;
pub mod config;
pub mod daemon;
pub mod error;
pub mod identity;

pub use commands::{run, Cli};
pub use config::{ConfigLayer, NodeConfig};
pub use error::{CliError, Result};

/// Logs go to stderr, one `key=value` record per line. `OPPWEB_LOG` takes
/// a filter such as `debug` or `oppweb_core=trace`.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("OPPWEB_LOG").unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .with_target(false)
        .try_init();
}
