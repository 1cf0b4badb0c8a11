//! Fixed-step simulation of one run.
//!
//! Each step of length `dt` starting at time `t`:
//!
//! 1. messages scheduled in `[t, t + dt)` are created at their origin;
//! 2. messages with `t > created + ttl` stop being live;
//! 3. native pairs within `min(range)` are in contact; contacts that ended
//!    abort their in-flight transfers, new ones start their setup latency;
//! 4. every link moves up to `min(bitrate) / 8 * dt` bytes per direction,
//!    one message in flight per direction, oldest live message the receiver
//!    lacks first; leftover capacity starts the next message;
//! 5. completed messages are handed over at `t + dt`;
//! 6. each web node attaches to the nearest access point in range and is
//!    reached by every live message that access point holds;
//! 7. nodes move.
//!
//! Every random choice draws from its own ChaCha stream: stream 0 for
//! message generation, one stream per node keyed by (group, member). Adding
//! a group therefore leaves every other node's trajectory unchanged.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{NodeClass, ScenarioConfig, SizeModel};
use crate::mobility::{distance, Point, StreetMap, Walker};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimMessage {
    pub index: usize,
    pub created_at: f64,
    pub size: u64,
    pub origin: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TransferRecord {
    /// Step index at whose end the message arrived.
    pub step: u64,
    pub from: usize,
    pub to: usize,
    pub message: usize,
}

struct Node {
    class: NodeClass,
    walker: Walker,
    rng: ChaCha8Rng,
    range: f64,
    bitrate: f64,
    has: FixedBitSet,
    incoming: FixedBitSet,
    /// Arrival time per message, NaN when not held.
    arrived: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct InFlight {
    message: usize,
    remaining: f64,
}

#[derive(Debug)]
struct Link {
    setup_left: f64,
    /// Index 0 carries low → high node id, index 1 the reverse.
    flights: [Option<InFlight>; 2],
}

pub struct Simulation {
    cfg: ScenarioConfig,
    seed: u64,
    map: Option<StreetMap>,
    nodes: Vec<Node>,
    natives: Vec<usize>,
    aps: Vec<usize>,
    webs: Vec<usize>,
    generators: Vec<usize>,
    gen_rng: ChaCha8Rng,
    next_gen: f64,
    messages: Vec<SimMessage>,
    live: FixedBitSet,
    first_live: usize,
    links: BTreeMap<(usize, usize), Link>,
    step: u64,
    steps: u64,
    pub(crate) log: Vec<TransferRecord>,
    bytes: f64,
    completed: u64,
    aborted: u64,
}

const BLOCK_BITS: usize = u32::BITS as usize;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn pick_size(model: &SizeModel, rng: &mut ChaCha8Rng) -> u64 {
    match *model {
        SizeModel::Constant(n) => n,
        SizeModel::Range { min, max } => rng.gen_range(min..=max),
    }
}

/// First message set in `from`, live, and neither held nor incoming at the
/// receiver. Indices follow creation order, so this is the oldest.
fn oldest_missing(from: &Node, to: &Node, live: &FixedBitSet) -> Option<usize> {
    let words = from.has.as_slice().iter().zip(live.as_slice()).zip(to.has.as_slice().iter().zip(to.incoming.as_slice()));
    for (w, ((h, l), (r, i))) in words.enumerate() {
        let c = h & l & !r & !i;
        if c != 0 {
            return Some(w * BLOCK_BITS + c.trailing_zeros() as usize);
        }
    }
    None
}

impl Simulation {
    /// Builds run `run` of the scenario. `map` must be given when the
    /// scenario names a map file.
    pub fn new(cfg: &ScenarioConfig, run: u32, map: Option<StreetMap>) -> Self {
        let seed = cfg.run_seed(run);
        let area = (cfg.width, cfg.height);
        let mut nodes = Vec::new();
        for (g, group) in cfg.groups.iter().enumerate() {
            for m in 0..group.count {
                let mut rng = stream_rng(seed, 1 + ((g as u64) << 24) + m as u64);
                let walker = match (&map, group.positions.get(m)) {
                    (_, Some(&p)) => Walker::waypoint(p, group.speed, area, &mut rng),
                    (Some(map), None) => Walker::streets(map, group.speed, &mut rng),
                    (None, None) => {
                        let p = (rng.gen_range(0.0..=area.0), rng.gen_range(0.0..=area.1));
                        Walker::waypoint(p, group.speed, area, &mut rng)
                    }
                };
                nodes.push(Node {
                    class: group.class,
                    walker,
                    rng,
                    range: group.range,
                    bitrate: group.bitrate,
                    has: FixedBitSet::new(),
                    incoming: FixedBitSet::new(),
                    arrived: Vec::new(),
                });
            }
        }
        let idx = |f: fn(NodeClass) -> bool| nodes.iter().enumerate().filter(|(_, n)| f(n.class)).map(|(i, _)| i).collect::<Vec<_>>();
        let natives = idx(NodeClass::is_native);
        let aps = idx(NodeClass::is_ap);
        let webs = idx(|c| !c.is_native());
        let generators = idx(NodeClass::generates);
        Self {
            seed,
            map,
            natives,
            aps,
            webs,
            generators,
            gen_rng: stream_rng(seed, 0),
            next_gen: cfg.load.first_at.unwrap_or(cfg.load.interval),
            messages: Vec::new(),
            live: FixedBitSet::new(),
            first_live: 0,
            links: BTreeMap::new(),
            step: 0,
            steps: (cfg.duration / cfg.step).ceil() as u64,
            log: Vec::new(),
            bytes: 0.0,
            completed: 0,
            aborted: 0,
            nodes,
            cfg: cfg.clone(),
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.steps
    }

    pub fn messages(&self) -> &[SimMessage] {
        &self.messages
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn class(&self, node: usize) -> NodeClass {
        self.nodes[node].class
    }

    pub fn position(&self, node: usize) -> Point {
        self.nodes[node].walker.position()
    }

    pub fn holds(&self, node: usize, message: usize) -> bool {
        self.nodes[node].has.contains(message)
    }

    /// Messages held by `node`, in creation order.
    pub fn holdings(&self, node: usize) -> Vec<usize> {
        self.nodes[node].has.ones().collect()
    }

    /// Links in contact whose setup latency has elapsed.
    pub fn ready_links(&self) -> Vec<(usize, usize)> {
        self.links.iter().filter(|(_, l)| l.setup_left <= 0.0).map(|(k, _)| *k).collect()
    }

    fn generate(&mut self, until: f64) {
        let load = &self.cfg.load;
        while self.next_gen < until && load.limit.map_or(true, |l| (self.messages.len() as u64) < l) {
            let origin = match load.origin {
                Some(o) => o,
                None => self.generators[self.gen_rng.gen_range(0..self.generators.len())],
            };
            let size = pick_size(&load.size, &mut self.gen_rng);
            let index = self.messages.len();
            let created_at = self.next_gen;
            self.messages.push(SimMessage { index, created_at, size, origin });
            self.live.grow(index + 1);
            self.live.insert(index);
            for n in &mut self.nodes {
                n.has.grow(index + 1);
                n.incoming.grow(index + 1);
                n.arrived.push(f64::NAN);
            }
            self.nodes[origin].has.insert(index);
            self.nodes[origin].arrived[index] = created_at;
            self.next_gen += load.interval;
        }
    }

    fn expire(&mut self, now: f64) {
        while self.first_live < self.messages.len() {
            let m = &self.messages[self.first_live];
            if now <= m.created_at + self.cfg.load.ttl {
                break;
            }
            self.live.set(self.first_live, false);
            self.first_live += 1;
        }
        // in-flight copies of expired messages are dropped
        for ((a, b), link) in self.links.iter_mut() {
            for (dir, slot) in link.flights.iter_mut().enumerate() {
                if let Some(f) = slot {
                    if !self.live.contains(f.message) {
                        let to = if dir == 0 { *b } else { *a };
                        self.nodes[to].incoming.set(f.message, false);
                        *slot = None;
                    }
                }
            }
        }
    }

    fn update_contacts(&mut self) {
        let mut current = Vec::new();
        for (i, &a) in self.natives.iter().enumerate() {
            for &b in &self.natives[i + 1..] {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                if distance(na.walker.position(), nb.walker.position()) <= na.range.min(nb.range) {
                    current.push((a, b));
                }
            }
        }
        let mut kept = BTreeMap::new();
        for key in current {
            let link = self.links.remove(&key).unwrap_or(Link { setup_left: self.cfg.setup_latency, flights: [None, None] });
            kept.insert(key, link);
        }
        for ((a, b), link) in std::mem::replace(&mut self.links, kept) {
            for (dir, f) in link.flights.iter().enumerate() {
                if let Some(f) = f {
                    let to = if dir == 0 { b } else { a };
                    self.nodes[to].incoming.set(f.message, false);
                    self.aborted += 1;
                }
            }
        }
    }

    fn transfer(&mut self, dt: f64) -> Vec<(usize, usize, usize)> {
        let mut done = Vec::new();
        let keys: Vec<(usize, usize)> = self.links.keys().copied().collect();
        for (a, b) in keys {
            let rate = self.nodes[a].bitrate.min(self.nodes[b].bitrate) / 8.0;
            let link = self.links.get_mut(&(a, b)).expect("link present");
            let mut time = dt;
            if link.setup_left > 0.0 {
                let used = link.setup_left.min(dt);
                link.setup_left -= used;
                time -= used;
            }
            if time <= 0.0 {
                continue;
            }
            for dir in 0..2 {
                let (from, to) = if dir == 0 { (a, b) } else { (b, a) };
                let mut capacity = rate * time;
                while capacity > 0.0 {
                    let link = self.links.get_mut(&(a, b)).expect("link present");
                    let flight = match link.flights[dir] {
                        Some(f) => f,
                        None => {
                            let Some(m) = oldest_missing(&self.nodes[from], &self.nodes[to], &self.live) else {
                                break;
                            };
                            self.nodes[to].incoming.insert(m);
                            InFlight { message: m, remaining: self.messages[m].size as f64 }
                        }
                    };
                    let moved = capacity.min(flight.remaining);
                    capacity -= moved;
                    self.bytes += moved;
                    let left = flight.remaining - moved;
                    let link = self.links.get_mut(&(a, b)).expect("link present");
                    if left <= 0.0 {
                        link.flights[dir] = None;
                        done.push((from, to, flight.message));
                    } else {
                        link.flights[dir] = Some(InFlight { message: flight.message, remaining: left });
                    }
                }
            }
        }
        done
    }

    fn attach_web(&mut self) {
        for wi in 0..self.webs.len() {
            let w = self.webs[wi];
            let pos = self.nodes[w].walker.position();
            let mut best: Option<(f64, usize)> = None;
            for &ap in &self.aps {
                let d = distance(pos, self.nodes[ap].walker.position());
                if d <= self.nodes[w].range.min(self.nodes[ap].range) && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, ap));
                }
            }
            let Some((_, ap)) = best else { continue };
            let now = self.time() + self.cfg.step;
            let (web, ap) = if w < ap {
                let (lo, hi) = self.nodes.split_at_mut(ap);
                (&mut lo[w], &hi[0])
            } else {
                let (lo, hi) = self.nodes.split_at_mut(w);
                (&mut hi[0], &lo[ap])
            };
            let fresh: Vec<usize> = {
                let words = web.has.as_slice().iter().zip(ap.has.as_slice()).zip(self.live.as_slice());
                let mut out = Vec::new();
                for (i, ((r, h), l)) in words.enumerate() {
                    let mut c = h & l & !r;
                    while c != 0 {
                        out.push(i * BLOCK_BITS + c.trailing_zeros() as usize);
                        c &= c - 1;
                    }
                }
                out
            };
            for m in fresh {
                web.has.insert(m);
                web.arrived[m] = now;
            }
        }
    }

    /// Advances one step.
    pub fn step(&mut self) {
        let dt = self.cfg.step;
        let t = self.time();
        self.generate(t + dt);
        self.expire(t);
        self.update_contacts();
        for (from, to, m) in self.transfer(dt) {
            let node = &mut self.nodes[to];
            node.incoming.set(m, false);
            node.has.insert(m);
            node.arrived[m] = t + dt;
            self.completed += 1;
            self.log.push(TransferRecord { step: self.step, from, to, message: m });
        }
        self.attach_web();
        let map = self.map.as_ref();
        for n in &mut self.nodes {
            n.walker.step(dt, map, &mut n.rng);
        }
        self.step += 1;
    }

    pub fn run_to_end(mut self) -> RunReport {
        while !self.is_finished() {
            self.step();
        }
        self.report()
    }

    pub fn report(&self) -> RunReport {
        let native_count = self.natives.len();
        let web_count = self.webs.len();
        let messages: Vec<MessageStats> = self
            .messages
            .iter()
            .map(|m| {
                let native_reached = self.natives.iter().filter(|&&n| self.nodes[n].has.contains(m.index)).count();
                let web_reached = self.webs.iter().filter(|&&n| self.nodes[n].has.contains(m.index)).count();
                let mut lat: Vec<f64> = self
                    .natives
                    .iter()
                    .filter(|&&n| n != m.origin && self.nodes[n].has.contains(m.index))
                    .map(|&n| self.nodes[n].arrived[m.index] - m.created_at)
                    .collect();
                lat.sort_by(f64::total_cmp);
                MessageStats {
                    message: *m,
                    native_reached,
                    web_reached,
                    native_coverage: native_reached as f64 / native_count as f64,
                    web_coverage: (web_count > 0).then(|| web_reached as f64 / web_count as f64),
                    latency_p50: percentile(&lat, 0.5),
                    latency_p90: percentile(&lat, 0.9),
                }
            })
            .collect();
        let mean = |f: &dyn Fn(&MessageStats) -> Option<f64>| {
            let v: Vec<f64> = messages.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        RunReport {
            seed: self.seed,
            native_nodes: native_count,
            web_nodes: web_count,
            native_coverage: mean(&|s| Some(s.native_coverage)),
            web_coverage: mean(&|s| s.web_coverage),
            bytes_transferred: self.bytes.round() as u64,
            transfers_completed: self.completed,
            transfers_aborted: self.aborted,
            messages,
            transfers: self.log.clone(),
            holdings: (0..self.nodes.len()).map(|n| self.holdings(n)).collect(),
        }
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageStats {
    pub message: SimMessage,
    pub native_reached: usize,
    pub web_reached: usize,
    pub native_coverage: f64,
    pub web_coverage: Option<f64>,
    pub latency_p50: Option<f64>,
    pub latency_p90: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub native_nodes: usize,
    pub web_nodes: usize,
    /// Mean over messages; None without messages.
    pub native_coverage: Option<f64>,
    pub web_coverage: Option<f64>,
    pub bytes_transferred: u64,
    pub transfers_completed: u64,
    pub transfers_aborted: u64,
    pub messages: Vec<MessageStats>,
    pub transfers: Vec<TransferRecord>,
    /// Messages held by each node at the end, web nodes included.
    pub holdings: Vec<Vec<usize>>,
}
