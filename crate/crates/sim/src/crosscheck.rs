//! Replays a simulated run against the real protocol.
//!
//! Every native node gets an in-memory cache. Each generated message becomes
//! a real message with a payload of the simulated size, inserted at its
//! origin. After every step, each ready link runs a full sync session
//! in-process, with every frame encoded and decoded on the way. At the end
//! the holdings of both models are compared node by node.
//!
//! The abstract model is bandwidth-limited and hands messages over at the
//! end of a step, while the sessions complete instantly. The two agree once
//! messages are small next to link capacity and the network has gone quiet
//! before the end of the run.

use std::collections::{BTreeSet, HashMap, VecDeque};

use oppweb_core::sync::{Frame, SessionConfig, SessionReport, SyncSession};
use oppweb_core::{CacheStore, Message, MessageId};
use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::Simulation;
use crate::mobility::StreetMap;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeMismatch {
    pub node: usize,
    pub only_simulated: Vec<usize>,
    pub only_protocol: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossCheck {
    pub nodes: usize,
    pub sessions: u64,
    pub data_frames: u64,
    pub duplicate_frames: u64,
    pub failed_sessions: u64,
    pub mismatches: Vec<NodeMismatch>,
}

impl CrossCheck {
    pub fn agrees(&self) -> bool {
        self.mismatches.is_empty() && self.duplicate_frames == 0 && self.failed_sessions == 0
    }
}

/// Drives two sessions against each other until both finish.
fn exchange(a: &CacheStore, b: &CacheStore, now: u64, ids: (usize, usize)) -> Result<(SessionReport, SessionReport), String> {
    let mut sa = SyncSession::new(a.clone(), now, SessionConfig::new(format!("node-{}", ids.0)));
    let mut sb = SyncSession::new(b.clone(), now, SessionConfig::new(format!("node-{}", ids.1)));
    let mut to_b: VecDeque<Vec<u8>> = VecDeque::new();
    let mut to_a: VecDeque<Vec<u8>> = VecDeque::new();
    fn send(s: &mut SyncSession, frames: Vec<Frame>, q: &mut VecDeque<Vec<u8>>) {
        for f in frames {
            s.record_sent(&f);
            q.push_back(f.encode());
        }
    }
    let start = sa.start();
    send(&mut sa, start, &mut to_b);
    let start = sb.start();
    send(&mut sb, start, &mut to_a);
    loop {
        let mut moved = false;
        if let Some(bytes) = to_b.pop_front() {
            let f = Frame::decode(&bytes).map_err(|e| e.to_string())?;
            let out = sb.handle(f);
            send(&mut sb, out, &mut to_a);
            moved = true;
        }
        if let Some(bytes) = to_a.pop_front() {
            let f = Frame::decode(&bytes).map_err(|e| e.to_string())?;
            let out = sa.handle(f);
            send(&mut sa, out, &mut to_b);
            moved = true;
        }
        if !moved {
            break;
        }
    }
    Ok((sa.report(), sb.report()))
}

fn sim_message(index: usize, created_at: u64, ttl: u64, size: u64) -> Message {
    Message::builder("sim")
        .originator("simulator")
        .created_at(created_at)
        .ttl(ttl)
        .meta("index", index.to_string())
        .payload("body", vec![(index % 251) as u8; size as usize])
        .build()
        .expect("simulated message is well formed")
}

/// Runs run `run` of `cfg` under both models.
pub fn cross_check(cfg: &ScenarioConfig, run: u32) -> Result<CrossCheck, ConfigError> {
    cfg.validate()?;
    let map = cfg.map.as_ref().map(|p| StreetMap::load(p).map_err(ConfigError::Map)).transpose()?;
    let mut sim = Simulation::new(cfg, run, map);
    let caches: Vec<Option<CacheStore>> =
        (0..sim.node_count()).map(|n| sim.class(n).is_native().then(CacheStore::in_memory)).collect();
    let mut index_of: HashMap<MessageId, usize> = HashMap::new();
    let mut out = CrossCheck { nodes: 0, sessions: 0, data_frames: 0, duplicate_frames: 0, failed_sessions: 0, mismatches: Vec::new() };
    let ttl = cfg.load.ttl.floor() as u64;
    while !sim.is_finished() {
        let known = sim.messages().len();
        sim.step();
        let now = sim.time().floor() as u64;
        for m in sim.messages()[known..].to_vec() {
            let msg = sim_message(m.index, m.created_at.floor() as u64, ttl, m.size);
            index_of.insert(msg.id(), m.index);
            if let Some(c) = &caches[m.origin] {
                c.insert(msg, now).expect("fresh message inserts");
            }
        }
        for c in caches.iter().flatten() {
            c.expire_sweep(now).expect("in-memory sweep");
        }
        for (a, b) in sim.ready_links() {
            let (Some(ca), Some(cb)) = (&caches[a], &caches[b]) else { continue };
            out.sessions += 1;
            match exchange(ca, cb, now, (a, b)) {
                Ok((ra, rb)) => {
                    out.data_frames += (ra.sent.len() + rb.sent.len()) as u64;
                    out.duplicate_frames += ra.duplicate_data_frames + rb.duplicate_data_frames;
                    if !ra.is_done() || !rb.is_done() {
                        out.failed_sessions += 1;
                    }
                }
                Err(_) => out.failed_sessions += 1,
            }
        }
    }
    let now = sim.time().floor() as u64;
    let live = |i: usize| now as f64 <= sim.messages()[i].created_at + cfg.load.ttl;
    for (n, cache) in caches.iter().enumerate() {
        let Some(cache) = cache else { continue };
        out.nodes += 1;
        let simulated: BTreeSet<usize> = sim.holdings(n).into_iter().filter(|&i| live(i)).collect();
        let protocol: BTreeSet<usize> = cache.ids().iter().filter_map(|id| index_of.get(id).copied()).filter(|&i| live(i)).collect();
        if simulated != protocol {
            out.mismatches.push(NodeMismatch {
                node: n,
                only_simulated: simulated.difference(&protocol).copied().collect(),
                only_protocol: protocol.difference(&simulated).copied().collect(),
            });
        }
    }
    Ok(out)
}
