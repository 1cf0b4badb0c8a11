//! Movement models.
//!
//! Random waypoint on the open rectangle: each node picks a uniform
//! destination and a uniform speed from its group's range, walks there in a
//! straight line and immediately picks the next one.
//!
//! The map variant walks shortest paths between uniformly chosen map
//! vertices. Map files are edge lists, one segment per line:
//!
//! ```text
//! # x1 y1 x2 y2
//! 0 0 100 0
//! 100 0 100 80
//! ```
//!
//! Segments sharing an exact endpoint are connected.

use std::collections::HashMap;
use std::path::Path;

use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Point = (f64, f64);

pub fn distance(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Moves `from` toward `to` by at most `budget` metres. Returns the new
/// point and the unused budget.
fn advance(from: Point, to: Point, budget: f64) -> (Point, f64) {
    let d = distance(from, to);
    if d <= budget {
        (to, budget - d)
    } else {
        let f = budget / d;
        ((from.0 + (to.0 - from.0) * f, from.1 + (to.1 - from.1) * f), 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct StreetMap {
    graph: UnGraph<Point, f64>,
}

impl StreetMap {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut graph = UnGraph::new_undirected();
        let mut vertices: HashMap<(u64, u64), NodeIndex> = HashMap::new();
        let mut vertex = |g: &mut UnGraph<Point, f64>, p: Point| {
            *vertices.entry((p.0.to_bits(), p.1.to_bits())).or_insert_with(|| g.add_node(p))
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let nums = nums.map_err(|e| format!("line {}: {e}", n + 1))?;
            let [x1, y1, x2, y2] = nums[..] else {
                return Err(format!("line {}: expected four numbers", n + 1));
            };
            let (a, b) = (vertex(&mut graph, (x1, y1)), vertex(&mut graph, (x2, y2)));
            graph.add_edge(a, b, distance((x1, y1), (x2, y2)));
        }
        if graph.node_count() < 2 {
            return Err("map needs at least one segment".into());
        }
        Ok(Self { graph })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn vertex_count(&self) -> usize {
        self.graph.node_count()
    }

    fn position(&self, v: NodeIndex) -> Point {
        self.graph[v]
    }

    /// Vertices after `from` on a shortest path to `to`, or None when
    /// unreachable.
    fn route(&self, from: NodeIndex, to: NodeIndex) -> Option<Vec<NodeIndex>> {
        let (_, path) = astar(&self.graph, from, |v| v == to, |e| *e.weight(), |_| 0.0)?;
        Some(path.into_iter().skip(1).collect())
    }
}

/// Movement state of one node.
#[derive(Clone, Debug)]
pub enum Walker {
    Fixed(Point),
    Waypoint { pos: Point, dest: Point, speed: f64, speeds: (f64, f64), area: (f64, f64) },
    Streets { pos: Point, at: NodeIndex, path: Vec<NodeIndex>, speed: f64, speeds: (f64, f64) },
}

impl Walker {
    pub fn waypoint(start: Point, speeds: (f64, f64), area: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        if speeds.1 <= 0.0 {
            return Walker::Fixed(start);
        }
        let mut w = Walker::Waypoint { pos: start, dest: start, speed: 0.0, speeds, area };
        w.retarget(None, rng);
        w
    }

    pub fn streets(map: &StreetMap, speeds: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let at = NodeIndex::new(rng.gen_range(0..map.vertex_count()));
        let pos = map.position(at);
        if speeds.1 <= 0.0 {
            return Walker::Fixed(pos);
        }
        let mut w = Walker::Streets { pos, at, path: Vec::new(), speed: 0.0, speeds };
        w.retarget(Some(map), rng);
        w
    }

    pub fn position(&self) -> Point {
        match self {
            Walker::Fixed(p) => *p,
            Walker::Waypoint { pos, .. } | Walker::Streets { pos, .. } => *pos,
        }
    }

    fn retarget(&mut self, map: Option<&StreetMap>, rng: &mut ChaCha8Rng) {
        match self {
            Walker::Fixed(_) => {}
            Walker::Waypoint { dest, speed, speeds, area, .. } => {
                *dest = (rng.gen_range(0.0..=area.0), rng.gen_range(0.0..=area.1));
                *speed = rng.gen_range(speeds.0..=speeds.1);
            }
            Walker::Streets { at, path, speed, speeds, .. } => {
                let map = map.expect("street walker needs its map");
                *speed = rng.gen_range(speeds.0..=speeds.1);
                // unreachable or identical picks fall back to standing still for a step
                let to = NodeIndex::new(rng.gen_range(0..map.vertex_count()));
                *path = map.route(*at, to).unwrap_or_default();
            }
        }
    }

    /// Advances the node by `dt` seconds, picking new destinations with no
    /// pause whenever one is reached.
    pub fn step(&mut self, dt: f64, map: Option<&StreetMap>, rng: &mut ChaCha8Rng) {
        let mut left = dt;
        // a bounded number of legs per step; only tiny maps or areas need more
        for _ in 0..64 {
            match self {
                Walker::Fixed(_) => return,
                Walker::Waypoint { pos, dest, speed, .. } => {
                    let (p, rest) = advance(*pos, *dest, *speed * left);
                    *pos = p;
                    if p != *dest || *speed <= 0.0 {
                        return;
                    }
                    left = rest / *speed;
                    self.retarget(map, rng);
                }
                Walker::Streets { pos, at, path, speed, .. } => {
                    let map = map.expect("street walker needs its map");
                    let Some(&next) = path.first() else {
                        self.retarget(Some(map), rng);
                        continue;
                    };
                    let target = map.position(next);
                    let (p, rest) = advance(*pos, target, *speed * left);
                    *pos = p;
                    if p != target || *speed <= 0.0 {
                        return;
                    }
                    *at = next;
                    path.remove(0);
                    left = rest / *speed;
                }
            }
            if left <= 0.0 {
                return;
            }
        }
    }
}
