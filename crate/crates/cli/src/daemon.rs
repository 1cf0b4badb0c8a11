//! The long-running node: cache, render pipeline, portal, sync listener,
//! peer dialer and expiry sweeper.

use std::future::Future;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use oppweb_core::sandbox::{RenderPipeline, Sandbox};
use oppweb_core::sync::{run_tcp_session, SessionConfig, SessionReport};
use oppweb_core::CacheStore;
use oppweb_portal::{system_clock, Portal, PortalConfig};

use crate::config::NodeConfig;
use crate::error::{CliError, Result};
use crate::identity;

/// Idle time after which a sync connection is dropped.
pub const SESSION_IDLE: Duration = Duration::from_secs(30);
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

pub fn now() -> u64 {
    (system_clock())()
}

/// Connects to `addr` and runs one anti-entropy session.
pub fn dial(addr: &str, cache: &CacheStore, node_name: &str) -> Result<SessionReport> {
    let target = addr
        .to_socket_addrs()
        .map_err(|e| CliError::Network(format!("{addr}: {e}")))?
        .next()
        .ok_or_else(|| CliError::Network(format!("{addr}: no address")))?;
    let stream = TcpStream::connect_timeout(&target, CONNECT_TIMEOUT).map_err(|e| CliError::Network(format!("{addr}: {e}")))?;
    let report = run_tcp_session(stream, cache, now(), SessionConfig::new(node_name), SESSION_IDLE)
        .map_err(|e| CliError::Network(format!("{addr}: {e}")))?;
    if !report.is_done() {
        let reason = report.abort_reason.clone().unwrap_or_else(|| "session did not finish".into());
        return Err(CliError::Network(format!("{addr}: {reason}")));
    }
    Ok(report)
}

fn log_session(peer: &str, report: &SessionReport) {
    tracing::info!(
        peer,
        remote = report.peer.as_deref().unwrap_or("?"),
        phase = ?report.phase,
        sent = report.sent.len(),
        received = report.received.len(),
        duplicates = report.duplicate_data_frames,
        "session finished"
    );
}

/// Accepts sync connections until `stop` is set. Each connection runs on
/// its own thread.
fn spawn_sync_listener(listener: TcpListener, cache: CacheStore, node_name: String, stop: Arc<AtomicBool>) -> Result<JoinHandle<()>> {
    listener.set_nonblocking(true).map_err(CliError::network)?;
    thread::Builder::new()
        .name("sync-listener".into())
        .spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let cache = cache.clone();
                        let name = node_name.clone();
                        thread::spawn(move || {
                            if let Err(e) = stream.set_nonblocking(false) {
                                tracing::warn!(%peer, error = %e, "cannot configure connection");
                                return;
                            }
                            match run_tcp_session(stream, &cache, now(), SessionConfig::new(name), SESSION_IDLE) {
                                Ok(report) => log_session(&peer.to_string(), &report),
                                Err(e) => tracing::warn!(%peer, error = %e, "session failed"),
                            }
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(50)),
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        thread::sleep(Duration::from_millis(200));
                    }
                }
            }
        })
        .map_err(CliError::internal)
}

/// Addresses the daemon actually bound, useful when port 0 was requested.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    pub portal: SocketAddr,
    pub sync: SocketAddr,
}

/// Runs a node until `shutdown` resolves. `on_bound` is called once both
/// listeners are up.
pub async fn run_node<F>(cfg: NodeConfig, shutdown: F, on_bound: impl FnOnce(Bound)) -> Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    cfg.prepare_data_dir()?;
    let (identity, created) = identity::load_or_create(&cfg.key)?;
    if created {
        tracing::info!(path = %cfg.key.display(), "generated node key");
    }
    let (cache, recovery) = CacheStore::open(cfg.cache_dir()).map_err(CliError::storage)?;
    let swept = cache.expire_sweep(now()).map_err(CliError::storage)?;
    tracing::info!(
        loaded = recovery.loaded,
        discarded = recovery.discarded.len(),
        expired = swept.len(),
        fingerprint = %identity.fingerprint(),
        "cache opened"
    );

    let pipeline = RenderPipeline::spawn(cache.clone(), Sandbox::new(cfg.budget.clone()), now);
    let portal_config = PortalConfig {
        node_name: cfg.node_name.clone(),
        budget: cfg.budget.clone(),
        ttl: cfg.ttl,
        static_dir: cfg.static_dir.clone(),
        ..Default::default()
    };
    let portal = Portal::new(cache.clone(), identity, portal_config).map_err(CliError::config)?;

    let http = tokio::net::TcpListener::bind(cfg.portal_addr)
        .await
        .map_err(|e| CliError::Network(format!("portal {}: {e}", cfg.portal_addr)))?;
    let sync = TcpListener::bind(cfg.sync_addr).map_err(|e| CliError::Network(format!("sync {}: {e}", cfg.sync_addr)))?;
    let bound = Bound {
        portal: http.local_addr().map_err(CliError::network)?,
        sync: sync.local_addr().map_err(CliError::network)?,
    };

    let stop = Arc::new(AtomicBool::new(false));
    let listener = spawn_sync_listener(sync, cache.clone(), cfg.node_name.clone(), stop.clone())?;
    tracing::info!(portal = %bound.portal, sync = %bound.sync, node = %cfg.node_name, "listening");
    on_bound(bound);

    let mut background = Vec::new();
    if !cfg.peers.is_empty() {
        let (cache, peers, name, every) = (cache.clone(), cfg.peers.clone(), cfg.node_name.clone(), cfg.dial_interval);
        background.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                for peer in peers.clone() {
                    let (cache, name) = (cache.clone(), name.clone());
                    let result = tokio::task::spawn_blocking(move || dial(&peer, &cache, &name).map(|r| (peer, r))).await;
                    match result {
                        Ok(Ok((peer, report))) => log_session(&peer, &report),
                        Ok(Err(e)) => tracing::warn!(error = %e, "dial failed"),
                        Err(e) => tracing::warn!(error = %e, "dial task failed"),
                    }
                }
            }
        }));
    }
    {
        let (cache, every) = (cache.clone(), cfg.sweep_interval);
        background.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                match cache.expire_sweep(now()) {
                    Ok(gone) if !gone.is_empty() => tracing::info!(removed = gone.len(), "expired messages removed"),
                    Ok(_) => {}
                    Err(e) => tracing::warn!(error = %e, "expiry sweep failed"),
                }
            }
        }));
    }

    let served = axum::serve(http, portal.router()).with_graceful_shutdown(shutdown).await;

    tracing::info!("shutting down");
    for task in background {
        task.abort();
    }
    stop.store(true, Ordering::Relaxed);
    let _ = tokio::task::spawn_blocking(move || {
        let _ = listener.join();
        pipeline.shutdown();
    })
    .await;
    let repaired = cache.persist().map_err(CliError::storage)?;
    tracing::info!(messages = cache.len(), repaired, "cache persisted");
    served.map_err(CliError::network)
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

/// Prints the bound addresses on one stdout line so scripts can pick them up.
pub fn announce(bound: Bound) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "portal={} sync={}", bound.portal, bound.sync);
    let _ = out.flush();
}
