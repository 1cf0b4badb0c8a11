//! Command-line surface and the one-shot commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use oppweb_core::apps::AppBundle;
use oppweb_core::message::DEFAULT_TTL;
use oppweb_core::{CacheStore, InsertOutcome, KeyRecord, Message, MessageId};
use oppweb_sim::{run_sweep, write_messages_csv, write_summary_csv, ScenarioConfig, ScenarioReport};
use serde_json::json;

use crate::config::{ConfigLayer, NodeConfig};
use crate::daemon;
use crate::error::{CliError, Result};
use crate::identity;

#[derive(Parser, Debug)]
#[command(name = "oppweb", version, about = "Opportunistic web node")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the node daemon.
    #[command(subcommand)]
    Node(NodeCmd),
    /// Run one sync session against a peer and print the report.
    Dial {
        addr: String,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, default_value = "oppweb")]
        node_name: String,
    },
    #[command(subcommand)]
    Msg(MsgCmd),
    #[command(subcommand)]
    Key(KeyCmd),
    #[command(subcommand)]
    App(AppCmd),
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Subcommand, Debug)]
pub enum NodeCmd {
    Run(NodeArgs),
}

#[derive(Args, Debug, Default)]
pub struct NodeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub node_name: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub portal_addr: Option<String>,
    #[arg(long)]
    pub sync_addr: Option<String>,
    /// Peer sync address; repeat for several.
    #[arg(long = "peer")]
    pub peers: Vec<String>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub ttl: Option<u64>,
    /// Seconds between dials to each peer.
    #[arg(long)]
    pub dial_interval: Option<u64>,
    #[arg(long)]
    pub sweep_interval: Option<u64>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub cpu_ms: Option<u64>,
    #[arg(long)]
    pub memory_bytes: Option<usize>,
    #[arg(long)]
    pub output_bytes: Option<usize>,
}

impl NodeArgs {
    pub fn flag_layer(&self) -> ConfigLayer {
        let mut l = ConfigLayer {
            node_name: self.node_name.clone(),
            data_dir: self.data_dir.clone(),
            portal_addr: self.portal_addr.clone(),
            sync_addr: self.sync_addr.clone(),
            peers: (!self.peers.is_empty()).then(|| self.peers.clone()),
            key: self.key.clone(),
            ttl: self.ttl,
            dial_interval: self.dial_interval,
            sweep_interval: self.sweep_interval,
            static_dir: self.static_dir.clone(),
            ..Default::default()
        };
        l.budget.cpu_ms = self.cpu_ms;
        l.budget.memory_bytes = self.memory_bytes;
        l.budget.output_bytes = self.output_bytes;
        l
    }

    /// Resolves flags, the config file and the process environment.
    pub fn resolve(&self) -> Result<NodeConfig> {
        let file = match &self.config {
            Some(p) => ConfigLayer::load(p)?,
            None => ConfigLayer::default(),
        };
        NodeConfig::resolve(ConfigLayer::from_env(std::env::vars())?, file, self.flag_layer())
    }
}

#[derive(Args, Debug, Clone)]
pub struct StoreArgs {
    #[arg(long, env = "OPPWEB_DATA_DIR", default_value = "oppweb-data")]
    pub data_dir: PathBuf,
}

impl StoreArgs {
    pub fn open(&self) -> Result<CacheStore> {
        let (cache, _) = CacheStore::open(self.data_dir.join("cache")).map_err(CliError::storage)?;
        Ok(cache)
    }

    fn key_path(&self, key: &Option<PathBuf>) -> PathBuf {
        key.clone().unwrap_or_else(|| self.data_dir.join("node.key"))
    }
}

#[derive(Subcommand, Debug)]
pub enum MsgCmd {
    /// Print a message file, or a cached message by id, as JSON.
    Inspect {
        target: String,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Insert an encoded message file into the cache.
    Inject {
        file: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Print the cache contents and state digest.
    List {
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Subcommand, Debug)]
pub enum KeyCmd {
    /// Create a node key.
    Gen {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Replace an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Insert the node's key record into the cache.
    Publish {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TTL)]
        ttl: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum AppCmd {
    /// Sign a bundle directory into a template message file.
    Pack {
        dir: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TTL)]
        ttl: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum SimCmd {
    /// Run one scenario file, including its sweep.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Run every scenario file in a directory.
    Sweep {
        dir: PathBuf,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(CliError::internal)?;
    writeln!(out).map_err(CliError::internal)
}

fn read_message_file(path: &Path) -> Result<Message> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))?;
    Message::decode(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn msg(cmd: MsgCmd) -> Result<()> {
    match cmd {
        MsgCmd::Inspect { target, store } => {
            let path = Path::new(&target);
            let msg = if path.exists() {
                read_message_file(path)?
            } else {
                let id: MessageId = target
                    .parse()
                    .map_err(|_| CliError::Validation(format!("{target:?} is neither a file nor a message id")))?;
                let cache = store.open()?;
                cache.get(&id).map_err(|e| CliError::Validation(format!("{target}: {e}")))?.as_ref().clone()
            };
            print_json(&msg.to_debug_json())
        }
        MsgCmd::Inject { file, store } => {
            let msg = read_message_file(&file)?;
            let id = msg.id();
            let cache = store.open()?;
            let outcome = cache.insert(msg, daemon::now()).map_err(CliError::storage)?;
            let status = match outcome {
                InsertOutcome::New => "inserted",
                InsertOutcome::Duplicate => "duplicate",
                InsertOutcome::RejectedExpired => return Err(CliError::Validation(format!("{id} has expired"))),
                InsertOutcome::RejectedInvalid => return Err(CliError::Validation(format!("{id} is invalid"))),
            };
            println!("{id} {status}");
            Ok(())
        }
        MsgCmd::List { store } => {
            let cache = store.open()?;
            let ids: Vec<String> = cache.ids().iter().map(MessageId::to_hex).collect();
            print_json(&json!({"count": ids.len(), "digest": cache.state_digest().to_hex(), "ids": ids}))
        }
    }
}

pub fn key(cmd: KeyCmd) -> Result<()> {
    match cmd {
        KeyCmd::Gen { store, key, force } => {
            let path = store.key_path(&key);
            let id = oppweb_core::Identity::generate(&mut rand::rngs::OsRng);
            identity::write_identity(&path, &id, force)?;
            println!("{}", id.fingerprint());
            Ok(())
        }
        KeyCmd::Publish { store, key, ttl } => {
            let id = identity::read_identity(&store.key_path(&key))?;
            let msg = KeyRecord::to_message(&id, daemon::now(), ttl).map_err(CliError::validation)?;
            let msg_id = msg.id();
            store.open()?.insert(msg, daemon::now()).map_err(CliError::storage)?;
            println!("{msg_id}");
            Ok(())
        }
    }
}

pub fn app(cmd: AppCmd) -> Result<()> {
    match cmd {
        AppCmd::Pack { dir, key, out, ttl } => {
            let bundle = AppBundle::from_dir(&dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
            let id = identity::read_identity(&key)?;
            let msg = bundle.template(&id, daemon::now(), ttl).map_err(CliError::validation)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.owm", bundle.service())));
            std::fs::write(&out, msg.encode_canonical()).map_err(|e| CliError::Storage(format!("{}: {e}", out.display())))?;
            println!("{} {}", msg.id(), out.display());
            Ok(())
        }
    }
}

fn write_reports(out: &Path, reports: &[ScenarioReport]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Storage(format!("{}: {e}", out.display())))?;
    let create = |name: &str| {
        let p = out.join(name);
        std::fs::File::create(&p).map_err(|e| CliError::Storage(format!("{}: {e}", p.display())))
    };
    write_summary_csv(create("summary.csv")?, reports).map_err(CliError::storage)?;
    write_messages_csv(create("messages.csv")?, reports).map_err(CliError::storage)?;
    for r in reports {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |c| format!("{:.1}%", c * 100.0));
        println!("{}: native {} web {} ({} runs)", r.name, pct(r.native_coverage()), pct(r.web_coverage()), r.runs.len());
    }
    Ok(())
}

fn run_file(path: &Path) -> Result<Vec<ScenarioReport>> {
    let cfg = ScenarioConfig::load(path).map_err(CliError::config)?;
    run_sweep(&cfg).map_err(CliError::config)
}

pub fn sim(cmd: SimCmd) -> Result<()> {
    match cmd {
        SimCmd::Run { scenario, out } => write_reports(&out, &run_file(&scenario)?),
        SimCmd::Sweep { dir, out } => {
            let entries = std::fs::read_dir(&dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(CliError::Config(format!("no scenario files in {}", dir.display())));
            }
            let mut reports = Vec::new();
            for f in &files {
                reports.extend(run_file(f)?);
            }
            write_reports(&out, &reports)
        }
    }
}

pub fn dial(addr: &str, store: &StoreArgs, node_name: &str) -> Result<()> {
    let cache = store.open()?;
    let report = daemon::dial(addr, &cache, node_name)?;
    print_json(&serde_json::to_value(&report).map_err(CliError::internal)?)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Node(NodeCmd::Run(args)) => {
            let cfg = args.resolve()?;
            let rt = tokio::runtime::Runtime::new().map_err(CliError::internal)?;
            rt.block_on(daemon::run_node(cfg, daemon::shutdown_signal(), daemon::announce))
        }
        Command::Dial { addr, store, node_name } => dial(&addr, &store, &node_name),
        Command::Msg(c) => msg(c),
        Command::Key(c) => key(c),
        Command::App(c) => app(c),
        Command::Sim(c) => sim(c),
    }
}
