//! Fixture generators and brute-force oracles shared by the integration
//! tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smarrt::utility_map::{CellIndex, MultiResolutionMap};
use smarrt::{
    DynamicEnvironment, DynamicObstacle, NodeId, PlannerConfig, Point2, ReactivePlanner, Rect, SearchForest, Smarrt,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn random_point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Point2 {
    p(rng.gen_range(lo..hi), rng.gen_range(lo..hi))
}

/// Up to 200 nodes under random parents, then random prunes, reroots and
/// reparents.
pub fn random_forest<R: Rng>(rng: &mut R) -> SearchForest {
    let mut f = SearchForest::new(2.0);
    let n = rng.gen_range(1..=200);
    let mut ids: Vec<NodeId> = Vec::new();
    for _ in 0..n {
        let parent = if ids.is_empty() || rng.gen_bool(0.05) { None } else { Some(ids[rng.gen_range(0..ids.len())]) };
        ids.push(f.insert(random_point(rng, 0.0, 32.0), parent).unwrap());
    }
    for _ in 0..rng.gen_range(0..4) {
        let k = rng.gen_range(0..=ids.len() / 5);
        let victims: Vec<NodeId> = (0..k).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
        f.prune(&victims);
        ids.retain(|&id| f.contains(id));
        if ids.len() < 2 {
            break;
        }
        for _ in 0..rng.gen_range(0..3) {
            let a = ids[rng.gen_range(0..ids.len())];
            let b = ids[rng.gen_range(0..ids.len())];
            if f.root_of(a) != f.root_of(b) {
                f.reroot(a).unwrap();
                f.reparent(a, b).unwrap();
            }
        }
    }
    f
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Connected components over parent edges, as sorted id groups.
pub fn union_find_components(f: &SearchForest) -> BTreeSet<Vec<NodeId>> {
    let mut uf = UnionFind::new(f.watermark().index());
    for (id, n) in f.iter() {
        if let Some(pid) = n.parent {
            uf.union(id.index(), pid.index());
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (id, _) in f.iter() {
        groups.entry(uf.find(id.index())).or_default().push(id);
    }
    groups.into_values().collect()
}

/// Groups of nodes sharing a tree label.
pub fn label_components(f: &SearchForest) -> BTreeSet<Vec<NodeId>> {
    let mut groups: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for (id, n) in f.iter() {
        groups.entry(n.tree_label).or_default().push(id);
    }
    groups.into_values().collect()
}

/// Floodfill one random forest and compare with union-find. Returns a
/// description of the first mismatch.
pub fn floodfill_case(seed: u64) -> Result<(), String> {
    let mut f = random_forest(&mut rng(seed));
    let k = f.floodfill_relabel();
    let expected = union_find_components(&f);
    if label_components(&f) != expected {
        return Err(format!("seed {seed}: partition differs from union-find"));
    }
    if k != expected.len() {
        return Err(format!("seed {seed}: {k} labels for {} components", expected.len()));
    }
    if f.iter().any(|(_, n)| n.tree_label as usize >= k) {
        return Err(format!("seed {seed}: label outside 0..{k}"));
    }
    Ok(())
}

/// Level-0 utilities for a `side`x`side` map, with many zeros and ties.
pub fn random_utilities<R: Rng>(rng: &mut R, side: usize) -> Vec<f64> {
    let zero_share = rng.gen_range(0.5..1.0);
    let continuous = rng.gen_bool(0.3);
    (0..side * side)
        .map(|_| {
            if rng.gen_bool(zero_share) {
                0.0
            } else if continuous {
                rng.gen_range(0.01..1.0)
            } else {
                rng.gen_range(1..4) as f64
            }
        })
        .collect()
}

fn morton(ix: usize, iy: usize) -> u64 {
    let mut code = 0u64;
    for bit in 0..32 {
        code |= (((ix >> bit) & 1) as u64) << (2 * bit);
        code |= (((iy >> bit) & 1) as u64) << (2 * bit + 1);
    }
    code
}

/// Exhaustive sampling-cell search over raw level-0 values.
///
/// Widening: at the first level whose clipped 3x3 around the robot's
/// ancestor holds a block with positive maximum, take the block with the
/// largest maximum (first in row-major order on ties). Descending: the
/// level-0 cell of that block holding its maximum, first in Morton order,
/// which is where a greedy first-child-wins descent ends.
pub fn search_oracle(values: &[f64], side: usize, robot: (usize, usize)) -> Option<CellIndex> {
    let levels = side.trailing_zeros() as usize;
    let block_max = |level: usize, bx: usize, by: usize| {
        let s = 1 << level;
        let mut m = 0.0_f64;
        for y in by * s..(by + 1) * s {
            for x in bx * s..(bx + 1) * s {
                m = m.max(values[y * side + x]);
            }
        }
        m
    };
    for level in 0..levels {
        let lside = side >> level;
        let (ax, ay) = ((robot.0 >> level) as i64, (robot.1 >> level) as i64);
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for by in ay - 1..=ay + 1 {
            for bx in ax - 1..=ax + 1 {
                if bx < 0 || by < 0 || bx >= lside as i64 || by >= lside as i64 {
                    continue;
                }
                cands.push((bx as usize, by as usize, block_max(level, bx as usize, by as usize)));
            }
        }
        let best = cands.iter().map(|c| c.2).fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        let &(bx, by, _) = cands.iter().find(|c| c.2 == best).expect("maximum present");
        let s = 1 << level;
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for y in by * s..(by + 1) * s {
            for x in bx * s..(bx + 1) * s {
                if values[y * side + x] == best {
                    cells.push((x, y));
                }
            }
        }
        let (x, y) = cells.into_iter().min_by_key(|&(x, y)| morton(x, y)).expect("block attains its max");
        return Some(CellIndex::new(0, x, y));
    }
    None
}

pub fn search_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let side = 16;
    let mut map = MultiResolutionMap::build(Rect::new(p(0.0, 0.0), p(16.0, 16.0)), 1.0).unwrap();
    let values = random_utilities(&mut r, side);
    map.assign_level0_utilities(&values);
    let robot = (r.gen_range(0..side), r.gen_range(0..side));
    let got = map.search_sampling_cell(CellIndex::new(0, robot.0, robot.1));
    let want = search_oracle(&values, side, robot);
    if got == want {
        Ok(())
    } else {
        Err(format!("seed {seed}: robot {robot:?} got {got:?} want {want:?}"))
    }
}

/// A SMARRT instance holding a random goal-rooted tree, following a random
/// branch of it, with the robot placed near the branch, among random
/// moving obstacles.
pub struct PlannerFixture {
    pub planner: Smarrt,
    pub env: DynamicEnvironment,
}

pub fn planner_fixture(seed: u64) -> PlannerFixture {
    let mut r = rng(seed);
    let bounds = Rect::new(p(0.0, 0.0), p(32.0, 32.0));
    let cfg = PlannerConfig {
        robot_speed: r.gen_range(1.0..6.0),
        t_u_init: r.gen_range(0.01..1.5),
        ..PlannerConfig::default()
    };
    let goal = random_point(&mut r, 1.0, 31.0);
    let env_seed = r.gen();
    let mut planner = Smarrt::new(cfg, rng(r.gen()));
    let env0 = DynamicEnvironment::new(bounds, vec![], vec![], rng(env_seed));
    let root = planner.prepare(&env0, goal, goal).unwrap();
    let mut ids = vec![root];
    for _ in 0..r.gen_range(5..150) {
        let parent = ids[r.gen_range(0..ids.len())];
        let q = planner.forest().position(parent);
        let next = p((q.x + r.gen_range(-3.0..3.0)).clamp(0.0, 32.0), (q.y + r.gen_range(-3.0..3.0)).clamp(0.0, 32.0));
        ids.push(planner.add_node(next, Some(parent)));
    }
    let leaf = ids[r.gen_range(0..ids.len())];
    planner.follow_chain_from(leaf);
    let q = planner.forest().position(leaf);
    planner.set_robot_position(p(
        (q.x + r.gen_range(-1.0..1.0)).clamp(0.0, 32.0),
        (q.y + r.gen_range(-1.0..1.0)).clamp(0.0, 32.0),
    ));
    let dynamics = (0..r.gen_range(0..5))
        .map(|_| DynamicObstacle::new(random_point(&mut r, 0.0, 32.0), r.gen_range(0.3..2.0), r.gen_range(0.0..4.0)))
        .collect();
    let env = DynamicEnvironment::new(bounds, vec![], dynamics, rng(env_seed));
    PlannerFixture { planner, env }
}

/// `t_u` clamped so the horizon length `2 t_u v` lies in `[r_h_min, r_h_max]`.
pub fn oracle_t_u(cfg: &PlannerConfig) -> f64 {
    let v = cfg.robot_speed;
    cfg.t_u_init.max(cfg.r_h_min / (2.0 * v)).min(cfg.r_h_max / (2.0 * v))
}

fn seg_dist(a: Point2, b: Point2, c: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((c.x - a.x) * dx + (c.y - a.y) * dy) / len2).clamp(0.0, 1.0) };
    let (px, py) = (a.x + t * dx - c.x, a.y + t * dy - c.y);
    (px * px + py * py).sqrt()
}

fn d(a: Point2, b: Point2) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// The path from the robot up to arc length `len`.
pub fn oracle_horizon(poly: &[Point2], len: f64) -> Vec<Point2> {
    let mut out = vec![poly[0]];
    let mut left = len;
    for w in poly.windows(2) {
        let l = d(w[0], w[1]);
        if l >= left {
            if l > 0.0 {
                let t = left / l;
                out.push(p(w[0].x + (w[1].x - w[0].x) * t, w[0].y + (w[1].y - w[0].y) * t));
            }
            return out;
        }
        left -= l;
        out.push(w[1]);
    }
    out
}

/// Zones as `(centre, radius)`.
pub fn oracle_zones(env: &DynamicEnvironment, t_u: f64) -> Vec<(Point2, f64)> {
    env.dynamics.iter().map(|o| (o.position, o.radius + 2.0 * t_u * o.speed)).collect()
}

/// Nodes within the pruning radius of the robot that lie in some zone.
pub fn oracle_prune_set(fx: &PlannerFixture) -> (BTreeSet<NodeId>, f64) {
    let cfg = fx.planner.config();
    let t_u = oracle_t_u(cfg);
    let poly = fx.planner.follower().remaining_polyline();
    let p_c = poly[0];
    let horizon = oracle_horizon(&poly, 2.0 * t_u * cfg.robot_speed);
    let p_f = *horizon.last().unwrap();
    let r_h = d(p_c, p_f).max(cfg.r_h_min).min(cfg.r_h_max);
    let zones = oracle_zones(&fx.env, t_u);
    let set = fx
        .planner
        .forest()
        .iter()
        .filter(|(_, n)| d(n.position, p_c) <= r_h && zones.iter().any(|&(c, r)| d(n.position, c) <= r))
        .map(|(id, _)| id)
        .collect();
    (set, r_h)
}

pub fn prune_case(seed: u64) -> Result<(), String> {
    let mut fx = planner_fixture(seed);
    let (want, r_h) = oracle_prune_set(&fx);
    let p_c = fx.planner.follower().position;
    let before: BTreeSet<NodeId> = fx.planner.forest().iter().map(|(id, _)| id).collect();
    let positions: BTreeMap<NodeId, Point2> = fx.planner.forest().iter().map(|(id, n)| (id, n.position)).collect();
    let count = fx.planner.prune_risky(&fx.env);
    let after: BTreeSet<NodeId> = fx.planner.forest().iter().map(|(id, _)| id).collect();
    let got: BTreeSet<NodeId> = before.difference(&after).copied().collect();
    if let Some(id) = got.iter().find(|id| d(positions[id], p_c) > r_h) {
        return Err(format!("seed {seed}: node {id} outside the horizon disc was pruned"));
    }
    if got != want || count != want.len() {
        return Err(format!("seed {seed}: pruned {got:?} (count {count}), expected {want:?}"));
    }
    fx.planner.forest().check_consistency().map_err(|e| format!("seed {seed}: {e}"))?;
    if !fx.planner.map().unwrap().labels_match(fx.planner.forest()) {
        return Err(format!("seed {seed}: map labels out of step with the forest"));
    }
    Ok(())
}

/// Adding an obstacle whose zone misses the horizon path leaves the
/// feasibility verdict unchanged. Returns the verdict.
pub fn locality_case(seed: u64) -> Result<bool, String> {
    let mut fx = planner_fixture(seed);
    let mut r = rng(seed ^ 0x5eed);
    let cfg = fx.planner.config().clone();
    let t_u = oracle_t_u(&cfg);
    let poly = fx.planner.follower().remaining_polyline();
    let horizon = oracle_horizon(&poly, 2.0 * t_u * cfg.robot_speed);
    let before = fx.planner.check_feasibility(&fx.env);
    for _ in 0..1000 {
        let o = DynamicObstacle::new(random_point(&mut r, 0.0, 32.0), r.gen_range(0.3..2.0), r.gen_range(0.0..4.0));
        let zr = o.radius + 2.0 * t_u * o.speed;
        let misses = if horizon.len() == 1 {
            d(horizon[0], o.position) > zr
        } else {
            horizon.windows(2).all(|w| seg_dist(w[0], w[1], o.position) > zr)
        };
        if misses {
            fx.env.dynamics.push(o);
            let after = fx.planner.check_feasibility(&fx.env);
            return if after == before {
                Ok(before)
            } else {
                Err(format!("seed {seed}: verdict changed from {before} to {after}"))
            };
        }
    }
    Ok(before)
}

/// Random edits to the map followed by utility passes, checking max-pooling
/// after every pass. Returns the number of passes checked.
pub fn pooling_fuzz(seed: u64, events: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut map = MultiResolutionMap::build(Rect::new(p(0.0, 0.0), p(32.0, 32.0)), 1.0).unwrap();
    let mut live: Vec<(NodeId, Point2)> = Vec::new();
    let mut next = 0u32;
    let mut checks = 0;
    for event in 0..events {
        match r.gen_range(0..10) {
            0..=3 => {
                let q = random_point(&mut r, 0.0, 32.0);
                let id = NodeId::from_raw(next);
                next += 1;
                map.index_node(id, q, r.gen_range(0..4)).unwrap();
                live.push((id, q));
            }
            4 | 5 if !live.is_empty() => {
                let (id, q) = live.swap_remove(r.gen_range(0..live.len()));
                map.remove_node(id, q).unwrap();
            }
            6 if !live.is_empty() => {
                let (id, q) = live[r.gen_range(0..live.len())];
                map.set_label(id, q, r.gen_range(0..4)).unwrap();
            }
            7 => {
                let c = CellIndex::new(0, r.gen_range(0..32), r.gen_range(0..32));
                map.mask_cell(c);
                pooled_exactly(&map).map_err(|e| format!("seed {seed} event {event} (mask): {e}"))?;
            }
            _ => {
                map.mark_validity();
                map.compute_utilities(random_point(&mut r, 0.0, 32.0), random_point(&mut r, 0.0, 32.0));
                pooled_exactly(&map).map_err(|e| format!("seed {seed} event {event}: {e}"))?;
                checks += 1;
            }
        }
    }
    Ok(checks)
}

/// Every coarse cell equals the maximum of its four children.
pub fn pooled_exactly(map: &MultiResolutionMap) -> Result<(), String> {
    let levels = map.snapshot();
    for pair in levels.windows(2) {
        let (fine, coarse) = (&pair[0], &pair[1]);
        for iy in 0..coarse.side {
            for ix in 0..coarse.side {
                let child = |dx: usize, dy: usize| fine.values[(2 * iy + dy) * fine.side + 2 * ix + dx];
                let m = child(0, 0).max(child(1, 0)).max(child(0, 1)).max(child(1, 1));
                let v = coarse.values[iy * coarse.side + ix];
                if v != m {
                    return Err(format!("level {} cell ({ix}, {iy}) holds {v}, children max {m}", coarse.level));
                }
            }
        }
    }
    Ok(())
}
