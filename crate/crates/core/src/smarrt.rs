//! SMARRT: goal-rooted RRT that checks only a short horizon ahead of the
//! robot, prunes risky nodes without dropping their subtrees, and repairs
//! the resulting fragments by sampling inside the most useful map cell.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::DynamicEnvironment;
use crate::forest::{steer, NodeId, SearchForest};
use crate::geometry::{dist, point_in_circle, Point2, Segment2};
use crate::planner::{
    point_along, polyline_hits_zones, Hazards, PathFollower, PlanError, ReactivePlanner, RobotStatus, TickEvent,
};
use crate::utility_map::{CellIndex, MultiResolutionMap, UtilityLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub steer_step: f64,
    pub goal_tolerance: f64,
    pub robot_speed: f64,
    /// Initial estimate of the replanning time, seconds.
    pub t_u_init: f64,
    /// Weight of the newest measurement in the replanning-time average.
    pub t_u_smoothing: f64,
    pub r_h_min: f64,
    pub r_h_max: f64,
    pub repair_samples_per_cell: usize,
    pub connect_radius: f64,
    pub rewire_radius: f64,
    pub goal_bias: f64,
    /// Finest tile size of the utility map.
    pub min_cell: f64,
    pub initial_budget: usize,
    /// Cells tried before falling back to global growth.
    pub max_cell_failures: usize,
    pub fallback_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            steer_step: 2.0,
            goal_tolerance: 0.5,
            robot_speed: 4.0,
            t_u_init: 0.05,
            t_u_smoothing: 0.3,
            r_h_min: 1.0,
            r_h_max: 8.0,
            repair_samples_per_cell: 10,
            connect_radius: 4.0,
            rewire_radius: 4.0,
            goal_bias: 0.05,
            min_cell: 1.0,
            initial_budget: 100_000,
            max_cell_failures: 5,
            fallback_budget: 2_000,
        }
    }
}

impl PlannerConfig {
    /// `t_u` limited so that the horizon `2 t_u v` stays within `[r_h_min, r_h_max]`.
    pub fn effective_t_u(&self, t_u: f64) -> f64 {
        let v = self.robot_speed.max(f64::MIN_POSITIVE);
        t_u.clamp(self.r_h_min / (2.0 * v), self.r_h_max / (2.0 * v))
    }
}

pub struct Smarrt {
    cfg: PlannerConfig,
    forest: SearchForest,
    map: Option<MultiResolutionMap>,
    follower: PathFollower,
    goal: Point2,
    goal_root: Option<NodeId>,
    t_u: f64,
    rng: ChaCha8Rng,
    // Set when a repair failed; the stored path may reference pruned nodes.
    broken: bool,
    reached: bool,
    last_cell: Option<CellIndex>,
    costs: CostMemo,
}

/// Root distances cached for the duration of one query; a new generation
/// invalidates every slot without clearing the buffer.
#[derive(Debug, Clone, Default)]
struct CostMemo {
    generation: u32,
    slots: Vec<(u32, f64)>,
    stack: Vec<NodeId>,
}

impl CostMemo {
    fn begin(&mut self, forest: &SearchForest) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.slots.fill((0, 0.0));
            self.generation = 1;
        }
        let w = forest.watermark().index();
        if self.slots.len() < w {
            self.slots.resize(w, (0, 0.0));
        }
    }

    /// Path length from `id` to its root.
    fn cost(&mut self, forest: &SearchForest, id: NodeId) -> f64 {
        let g = self.generation;
        let mut cur = id;
        let mut base = 0.0;
        loop {
            let (sg, c) = self.slots[cur.index()];
            if sg == g {
                base = c;
                break;
            }
            match forest.parent(cur) {
                Some(p) => {
                    self.stack.push(cur);
                    cur = p;
                }
                None => {
                    self.slots[cur.index()] = (g, 0.0);
                    break;
                }
            }
        }
        while let Some(n) = self.stack.pop() {
            let p = forest.parent(n).expect("chain");
            base += dist(forest.position(n), forest.position(p));
            self.slots[n.index()] = (g, base);
        }
        self.slots[id.index()].1
    }
}

impl Smarrt {
    pub fn new(cfg: PlannerConfig, rng: ChaCha8Rng) -> Self {
        let forest = SearchForest::new(cfg.steer_step);
        let t_u = cfg.t_u_init;
        Self {
            cfg,
            forest,
            map: None,
            follower: PathFollower::default(),
            goal: Point2::default(),
            goal_root: None,
            t_u,
            rng,
            broken: false,
            reached: false,
            last_cell: None,
            costs: CostMemo::default(),
        }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn t_u(&self) -> f64 {
        self.t_u
    }

    pub fn effective_t_u(&self) -> f64 {
        self.cfg.effective_t_u(self.t_u)
    }

    pub fn map(&self) -> Option<&MultiResolutionMap> {
        self.map.as_ref()
    }

    pub fn goal_root(&self) -> Option<NodeId> {
        self.goal_root
    }

    pub fn follower(&self) -> &PathFollower {
        &self.follower
    }

    /// Put the robot at an arbitrary point of the current path's plane; for fixtures.
    pub fn set_robot_position(&mut self, p: Point2) {
        self.follower.position = p;
    }

    /// Adopt the parent chain starting at `node` as the current path.
    pub fn follow_chain_from(&mut self, node: NodeId) {
        let chain = self.forest.chain_to_root(node).expect("live node");
        self.follower.set_from_chain(&self.forest, chain);
        self.broken = false;
    }

    fn map_mut(&mut self) -> &mut MultiResolutionMap {
        self.map.as_mut().expect("initial_plan builds the map")
    }

    fn horizon_length(&self) -> f64 {
        2.0 * self.effective_t_u() * self.cfg.robot_speed
    }

    fn goal_label(&self) -> Option<u32> {
        self.goal_root.map(|g| self.forest.label(g))
    }

    /// Insert a node into both the forest and the map.
    pub fn add_node(&mut self, p: Point2, parent: Option<NodeId>) -> NodeId {
        let id = self.forest.insert(p, parent).expect("parent is live");
        let label = self.forest.label(id);
        self.map_mut().index_node(id, p, label).expect("nodes stay in bounds");
        id
    }

    /// Copy the labels of the tree under `root` into the map.
    fn sync_tree_labels(&mut self, root: NodeId) {
        let Self { map, forest, .. } = self;
        let map = map.as_mut().expect("map");
        let label = forest.label(root);
        for id in forest.subtree(root) {
            map.set_label(id, forest.position(id), label).expect("indexed");
        }
    }

    /// Hang the tree containing `frag` under `new`, rerooting it at `frag`.
    fn graft(&mut self, frag: NodeId, new: NodeId) {
        self.forest.reroot(frag).expect("live");
        self.forest.reparent(frag, new).expect("different trees");
        self.sync_tree_labels(frag);
    }

    /// Reset to a forest holding only the goal root, with the robot at
    /// `start` and no path. Returns the goal root.
    pub fn prepare(&mut self, env: &DynamicEnvironment, start: Point2, goal: Point2) -> Result<NodeId, PlanError> {
        self.forest.clear();
        self.map = Some(MultiResolutionMap::build(env.bounds, self.cfg.min_cell)?);
        self.goal = goal;
        self.follower = PathFollower::new(start);
        self.broken = false;
        self.reached = dist(start, goal) <= self.cfg.goal_tolerance;
        self.t_u = self.cfg.t_u_init;
        let root = self.add_node(goal, None);
        self.goal_root = Some(root);
        Ok(root)
    }

    /// Goal-rooted RRT towards the robot, against static obstacles only.
    pub fn initial_plan(
        &mut self,
        env: &DynamicEnvironment,
        start: Point2,
        goal: Point2,
    ) -> Result<Vec<Point2>, PlanError> {
        let root = self.prepare(env, start, goal)?;
        if self.reached {
            self.follow_chain_from(root);
            return Ok(self.follower.remaining_polyline());
        }
        for _ in 0..self.cfg.initial_budget {
            let target = if self.rng.gen_bool(self.cfg.goal_bias) { start } else { env.sample_free(&mut self.rng)? };
            let near = self.forest.nearest(target)?;
            let from = self.forest.position(near);
            let new = steer(from, target, self.cfg.steer_step);
            if new == from || !env.segment_free_static(&Segment2::new(from, new)) {
                continue;
            }
            let id = self.add_node(new, Some(near));
            if dist(new, start) <= self.cfg.goal_tolerance {
                self.follow_chain_from(id);
                return Ok(self.follower.remaining_polyline());
            }
        }
        Err(PlanError::BudgetExhausted(self.cfg.initial_budget))
    }

    /// False iff the path between the robot and the horizon point touches a zone.
    pub fn check_feasibility(&self, env: &DynamicEnvironment) -> bool {
        let zones = env.collision_zones(self.effective_t_u());
        !polyline_hits_zones(&self.follower.horizon(self.horizon_length()), &zones)
    }

    /// Radius of the pruning disc around the robot.
    pub fn horizon_radius(&self) -> f64 {
        let poly = self.follower.remaining_polyline();
        let p_f = point_along(&poly, self.horizon_length()).unwrap_or(self.follower.position);
        dist(self.follower.position, p_f).clamp(self.cfg.r_h_min, self.cfg.r_h_max)
    }

    /// Nodes inside the horizon disc and inside at least one zone.
    pub fn risky_nodes(&self, env: &DynamicEnvironment) -> Vec<NodeId> {
        let zones = env.collision_zones(self.effective_t_u());
        let p_c = self.follower.position;
        let mut out = Vec::new();
        self.forest.for_each_near(p_c, self.horizon_radius(), |id, _| {
            let q = self.forest.position(id);
            if zones.iter().any(|z| point_in_circle(q, z)) {
                out.push(id);
            }
        });
        out.sort_unstable();
        out
    }

    /// Remove risky nodes, relabel the fragments and refresh the map.
    pub fn prune_risky(&mut self, env: &DynamicEnvironment) -> usize {
        let victims = self.risky_nodes(env);
        for &v in &victims {
            let q = self.forest.position(v);
            self.map_mut().remove_node(v, q).expect("indexed");
        }
        let (pruned, detached) = self.forest.prune_detached(&victims);
        let Self { map, forest, .. } = self;
        let map = map.as_mut().expect("map");
        for root in detached {
            let label = forest.label_bound();
            forest.relabel_tree(root, |id, p| map.set_label(id, p, label).expect("indexed"));
        }
        if let Some(g) = self.goal_root {
            if !self.forest.contains(g) {
                let goal = self.goal;
                self.goal_root = Some(self.add_node(goal, None));
            }
        }
        pruned
    }

    /// Utility-guided repair; returns the new path on success.
    pub fn repair(&mut self, env: &DynamicEnvironment) -> Option<Vec<Point2>> {
        let p_c = self.follower.position;
        let hazards = Hazards::new(env, self.effective_t_u(), p_c);
        let goal = self.goal;
        let map = self.map_mut();
        map.mark_validity();
        map.compute_utilities(p_c, goal);
        self.last_cell = None;

        if let Some(path) = self.connect_robot(env, &hazards) {
            return Some(path);
        }

        let robot_cell = self.map_mut().cell_of(p_c).ok()?;
        for _ in 0..self.cfg.max_cell_failures {
            let Some(cell) = self.map_mut().search_sampling_cell(robot_cell) else {
                break;
            };
            self.last_cell = Some(cell);
            let rect = self.map_mut().cell_rect(cell);
            for _ in 0..self.cfg.repair_samples_per_cell {
                let s = Point2::new(
                    self.rng.gen_range(rect.min.x..=rect.max.x),
                    self.rng.gen_range(rect.min.y..=rect.max.y),
                );
                if !env.point_free_static(s) || !hazards.point_clear(s) {
                    continue;
                }
                if self.join_sample(env, &hazards, s).is_some() {
                    if let Some(path) = self.connect_robot(env, &hazards) {
                        return Some(path);
                    }
                }
            }
            self.map_mut().mask_cell(cell);
        }
        self.global_fallback(env, &hazards)
    }

    /// Insert `s` and connect it to the nearest reachable node of every tree
    /// within `connect_radius`, merging those trees.
    fn join_sample(&mut self, env: &DynamicEnvironment, hazards: &Hazards, s: Point2) -> Option<NodeId> {
        let mut picks: Vec<(u32, NodeId)> = Vec::new();
        for (_, id) in self.forest.near_by_distance(s, self.cfg.connect_radius) {
            let label = self.forest.label(id);
            if picks.iter().any(|&(l, _)| l == label) {
                continue;
            }
            if hazards.edge_ok(env, s, self.forest.position(id)) {
                picks.push((label, id));
            }
        }
        if picks.is_empty() {
            return None;
        }
        let goal_label = self.goal_label();
        let parent_pos = picks.iter().position(|&(l, _)| Some(l) == goal_label).unwrap_or(0);
        let (_, parent) = picks.remove(parent_pos);
        let new = self.add_node(s, Some(parent));
        for (_, frag) in picks {
            self.graft(frag, new);
        }
        Some(new)
    }

    /// Best goal-connected node the robot can drive to directly.
    fn connect_robot(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> Option<Vec<Point2>> {
        let p_c = self.follower.position;
        let goal_label = self.goal_label()?;
        let Self { forest, costs, .. } = self;
        costs.begin(forest);
        let mut cands: Vec<(f64, NodeId)> = Vec::new();
        forest.for_each_near(p_c, self.cfg.connect_radius, |id, d| {
            if forest.label(id) == goal_label {
                cands.push((d + costs.cost(forest, id), id));
            }
        });
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let horizon = self.horizon_length();
        for (_, id) in cands {
            if !hazards.edge_ok(env, p_c, self.forest.position(id)) {
                continue;
            }
            let chain = self.forest.chain_to_root(id).ok()?;
            let mut poly = Vec::with_capacity(chain.len() + 1);
            poly.push(p_c);
            poly.extend(chain.iter().map(|&n| self.forest.position(n)));
            if hazards.horizon_clear(&poly, horizon) {
                self.follower.set_from_chain(&self.forest, chain);
                return Some(self.follower.remaining_polyline());
            }
        }
        None
    }

    /// Grow the goal tree from anywhere, biased towards the robot.
    fn global_fallback(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> Option<Vec<Point2>> {
        let p_c = self.follower.position;
        let goal_label = self.goal_label()?;
        for _ in 0..self.cfg.fallback_budget {
            let target = if self.rng.gen_bool(0.3) { p_c } else { env.sample_free(&mut self.rng).ok()? };
            let near = self.forest.nearest_where(target, |_, n| n.tree_label == goal_label)?;
            let from = self.forest.position(near);
            let new = steer(from, target, self.cfg.steer_step);
            if new == from || !hazards.edge_ok(env, from, new) {
                continue;
            }
            let id = self.add_node(new, Some(near));
            self.absorb_fragments(env, hazards, id);
            if dist(new, p_c) <= self.cfg.connect_radius {
                if let Some(path) = self.connect_robot(env, hazards) {
                    return Some(path);
                }
            }
        }
        None
    }

    /// Attach nearby fragments of other trees to `id`.
    fn absorb_fragments(&mut self, env: &DynamicEnvironment, hazards: &Hazards, id: NodeId) {
        let here = self.forest.position(id);
        let label = self.forest.label(id);
        let mut seen = vec![label];
        for (_, other) in self.forest.near_by_distance(here, self.cfg.steer_step) {
            let l = self.forest.label(other);
            if seen.contains(&l) {
                continue;
            }
            if hazards.edge_ok(env, here, self.forest.position(other)) {
                seen.push(l);
                self.graft(other, id);
            }
        }
    }

    /// Switch to a shorter goal-connected route through a nearby node.
    pub fn better_path_search(&mut self, env: &DynamicEnvironment) -> bool {
        let Some(goal_label) = self.goal_label() else {
            return false;
        };
        let p_c = self.follower.position;
        let hazards = Hazards::new(env, self.effective_t_u(), p_c);
        let current = self.follower.remaining_length();
        let Self { forest, costs, .. } = self;
        costs.begin(forest);
        let mut cands: Vec<(f64, NodeId)> = Vec::new();
        forest.for_each_near(p_c, self.cfg.rewire_radius, |id, d| {
            if forest.label(id) == goal_label {
                let c = d + costs.cost(forest, id);
                if c + 1e-6 < current {
                    cands.push((c, id));
                }
            }
        });
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, id) in cands {
            let q = self.forest.position(id);
            if env.segment_free_static(&Segment2::new(p_c, q)) && hazards.edge_clear(p_c, q) {
                let chain = self.forest.chain_to_root(id).expect("live");
                self.follower.set_from_chain(&self.forest, chain);
                return true;
            }
        }
        false
    }

    pub fn tick(&mut self, env: &mut DynamicEnvironment, dt: f64) -> RobotStatus {
        assert!(dt > 0.0, "dt must be positive");
        env.step(dt);
        if self.reached {
            return RobotStatus::idle(self.follower.position, true);
        }
        let mut status = RobotStatus::idle(self.follower.position, false);
        let step = self.cfg.robot_speed * dt;
        if !self.broken && self.check_feasibility(env) {
            if self.follower.advance(step) && self.better_path_search(env) {
                status.event = TickEvent::Reroute;
            }
        } else {
            let started = Instant::now();
            status.pruned = self.prune_risky(env);
            let repaired = self.repair(env);
            let wall = started.elapsed().as_secs_f64();
            debug_assert!(self.map.as_ref().is_some_and(|m| m.labels_match(&self.forest)));
            let a = self.cfg.t_u_smoothing;
            self.t_u = (1.0 - a) * self.t_u + a * wall;
            status.replanned_this_tick = true;
            status.replan_wall_time = wall;
            status.event = TickEvent::Replan;
            status.sampling_cell = self.last_cell;
            self.broken = repaired.is_none();
            status.replan_succeeded = repaired.is_some();
            if repaired.is_some() {
                self.follower.advance(step);
            }
        }
        self.reached = dist(self.follower.position, self.goal) <= self.cfg.goal_tolerance;
        status.position = self.follower.position;
        status.reached_goal = self.reached;
        status
    }
}

impl ReactivePlanner for Smarrt {
    fn name(&self) -> &'static str {
        "smarrt"
    }

    fn initial_plan(
        &mut self,
        env: &DynamicEnvironment,
        start: Point2,
        goal: Point2,
    ) -> Result<Vec<Point2>, PlanError> {
        Smarrt::initial_plan(self, env, start, goal)
    }

    fn tick(&mut self, env: &mut DynamicEnvironment, dt: f64) -> RobotStatus {
        Smarrt::tick(self, env, dt)
    }

    fn position(&self) -> Point2 {
        self.follower.position
    }

    fn path(&self) -> Vec<Point2> {
        self.follower.remaining_polyline()
    }

    fn forest(&self) -> &SearchForest {
        &self.forest
    }

    fn utility_snapshot(&self) -> Option<Vec<UtilityLevel>> {
        self.map.as_ref().map(MultiResolutionMap::snapshot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::DynamicObstacle;
    use crate::geometry::Rect;
    use rand::SeedableRng;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn world(dynamics: Vec<DynamicObstacle>) -> DynamicEnvironment {
        DynamicEnvironment::new(Rect::new(p(0.0, 0.0), p(32.0, 32.0)), vec![], dynamics, ChaCha8Rng::seed_from_u64(1))
    }

    fn planner() -> Smarrt {
        Smarrt::new(PlannerConfig::default(), ChaCha8Rng::seed_from_u64(2))
    }

    /// Goal root at (30, 2) with a straight chain of nodes towards (2, 2).
    fn corridor(s: &mut Smarrt, env: &DynamicEnvironment) -> Vec<NodeId> {
        let root = s.prepare(env, p(2.0, 2.0), p(30.0, 2.0)).unwrap();
        let mut ids = vec![root];
        for k in 1..=14 {
            ids.push(s.add_node(p(30.0 - 2.0 * k as f64, 2.0), Some(*ids.last().unwrap())));
        }
        s.follow_chain_from(*ids.last().unwrap());
        ids
    }

    #[test]
    fn t_u_is_clamped_by_the_horizon_bounds() {
        let cfg = PlannerConfig::default();
        assert_eq!(cfg.effective_t_u(0.001), 0.125);
        assert_eq!(cfg.effective_t_u(0.5), 0.5);
        assert_eq!(cfg.effective_t_u(3.0), 1.0);
    }

    #[test]
    fn initial_plan_reaches_the_robot_and_indexes_every_node() {
        let env = world(vec![]);
        let mut s = planner();
        let path = s.initial_plan(&env, p(2.0, 30.0), p(30.0, 2.0)).unwrap();
        assert_eq!(path[0], p(2.0, 30.0));
        assert_eq!(*path.last().unwrap(), p(30.0, 2.0));
        assert!(dist(path[0], path[1]) <= s.config().goal_tolerance);
        assert!(path.windows(2).skip(1).all(|w| dist(w[0], w[1]) <= s.config().steer_step + 1e-9));
        assert!(s.map().unwrap().labels_match(&s.forest));
        assert_eq!(s.forest.roots().len(), 1);
    }

    #[test]
    fn horizon_radius_follows_the_path_and_is_clamped() {
        let env = world(vec![]);
        let mut s = planner();
        corridor(&mut s, &env);
        // t_u 0.05 at 4 m/s gives a 0.4 m horizon, below the 1 m floor.
        assert_eq!(s.horizon_radius(), 1.0);
        s.t_u = 0.5;
        assert!((s.horizon_radius() - 4.0).abs() < 1e-12);
        s.t_u = 10.0;
        assert!((s.horizon_radius() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn feasibility_ignores_threats_beyond_the_horizon() {
        let mut s = planner();
        let far = world(vec![DynamicObstacle::new(p(20.0, 2.0), 1.0, 1.0)]);
        corridor(&mut s, &far);
        assert!(s.check_feasibility(&far));
        let near = world(vec![DynamicObstacle::new(p(2.5, 2.5), 1.0, 1.0)]);
        assert!(!s.check_feasibility(&near));
    }

    #[test]
    fn pruning_splits_the_tree_and_keeps_the_map_in_step() {
        let env = world(vec![DynamicObstacle::new(p(5.0, 2.0), 1.0, 0.0)]);
        let mut s = planner();
        let ids = corridor(&mut s, &env);
        s.t_u = 1.0;
        let pruned = s.prune_risky(&env);
        // Nodes at x = 4 and x = 6 sit in the zone and within 8 m of the robot.
        assert_eq!(pruned, 2);
        assert!(!s.forest.contains(ids[12]) && !s.forest.contains(ids[13]));
        assert_eq!(s.forest.roots().len(), 2);
        assert_ne!(s.forest.label(ids[14]), s.forest.label(ids[0]));
        assert!(s.map().unwrap().labels_match(&s.forest));
        assert_eq!(s.goal_root(), Some(ids[0]));
    }

    #[test]
    fn pruned_goal_root_is_replaced() {
        let env = world(vec![DynamicObstacle::new(p(30.0, 2.0), 1.0, 0.0)]);
        let mut s = planner();
        let ids = corridor(&mut s, &env);
        s.set_robot_position(p(29.5, 2.5));
        s.prune_risky(&env);
        let g = s.goal_root().unwrap();
        assert_ne!(g, ids[0]);
        assert_eq!(s.forest.position(g), p(30.0, 2.0));
        assert!(s.forest.parent(g).is_none());
    }

    #[test]
    fn repair_rejoins_the_fragments_around_a_threat() {
        let mut s = planner();
        let env = world(vec![DynamicObstacle::new(p(5.0, 2.0), 1.0, 0.0)]);
        let ids = corridor(&mut s, &env);
        s.t_u = 0.5;
        s.prune_risky(&env);
        let path = s.repair(&env).expect("repairable");
        assert_eq!(path[0], p(2.0, 2.0));
        assert_eq!(*path.last().unwrap(), p(30.0, 2.0));
        let zones = env.collision_zones(s.effective_t_u());
        assert!(!polyline_hits_zones(&path, &zones));
        let goal_label = s.forest.label(ids[0]);
        assert!(s.follower().remaining_nodes().iter().all(|&n| s.forest.label(n) == goal_label));
        assert!(s.map().unwrap().labels_match(&s.forest));
        s.forest.check_consistency().unwrap();
    }

    #[test]
    fn better_path_switches_to_the_shorter_route() {
        let env = world(vec![]);
        let mut s = planner();
        let root = s.prepare(&env, p(2.0, 2.0), p(10.0, 2.0)).unwrap();
        // Long route: up, across and down. Short route: straight along y = 2.
        let mut long = root;
        for q in [p(10.0, 6.0), p(6.0, 8.0), p(2.0, 6.0), p(2.5, 3.0)] {
            long = s.add_node(q, Some(long));
        }
        let mut short = root;
        for q in [p(7.0, 2.0), p(4.0, 2.0)] {
            short = s.add_node(q, Some(short));
        }
        s.follow_chain_from(long);
        let before = s.follower().remaining_length();
        assert!(s.better_path_search(&env));
        assert_eq!(s.follower().remaining_nodes()[0], short);
        assert!(s.follower().remaining_length() < before);
        // Already on the best route.
        assert!(!s.better_path_search(&env));
    }

    #[test]
    fn replan_ticks_update_the_time_estimate() {
        let mut env = world(vec![DynamicObstacle::new(p(5.0, 2.0), 1.0, 0.0)]);
        let mut s = planner();
        corridor(&mut s, &env);
        s.t_u = 1.0;
        let status = s.tick(&mut env, 0.05);
        assert!(status.replanned_this_tick);
        assert_eq!(status.event, TickEvent::Replan);
        assert!(status.pruned > 0);
        let expected = 0.7 * 1.0 + 0.3 * status.replan_wall_time;
        assert!((s.t_u() - expected).abs() < 1e-12);
    }

    #[test]
    fn repaired_paths_are_parent_chains_to_the_goal() {
        use crate::environment::StaticObstacle;
        let mut checked = 0;
        for seed in 0..6 {
            let dynamics = [p(16.0, 16.0), p(10.0, 22.0), p(22.0, 10.0), p(8.0, 12.0), p(20.0, 24.0)]
                .into_iter()
                .map(|q| DynamicObstacle::new(q, 1.0, 2.0))
                .collect();
            let wall = StaticObstacle::Rect(Rect::new(p(12.0, 12.0), p(14.0, 20.0)));
            let bounds = Rect::new(p(0.0, 0.0), p(32.0, 32.0));
            let mut env = DynamicEnvironment::new(bounds, vec![wall], dynamics, ChaCha8Rng::seed_from_u64(seed));
            let mut s = Smarrt::new(PlannerConfig::default(), ChaCha8Rng::seed_from_u64(seed));
            s.initial_plan(&env, p(2.0, 30.0), p(30.0, 2.0)).unwrap();
            for _ in 0..2400 {
                let status = s.tick(&mut env, 0.05);
                if status.replan_succeeded {
                    checked += 1;
                    let nodes = s.follower().remaining_nodes();
                    assert_eq!(nodes.last().copied(), s.goal_root());
                    for w in nodes.windows(2) {
                        assert_eq!(s.forest.parent(w[0]), Some(w[1]));
                    }
                    let path = s.path();
                    assert!(path.windows(2).all(|w| env.segment_free_static(&Segment2::new(w[0], w[1]))));
                }
                if status.reached_goal || env.robot_in_collision(status.position) {
                    break;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn whole_trial_reaches_the_goal_in_open_space() {
        let mut env = world(vec![]);
        let mut s = planner();
        s.initial_plan(&env, p(2.0, 30.0), p(30.0, 2.0)).unwrap();
        let mut ticks = 0;
        while !s.tick(&mut env, 0.05).reached_goal {
            ticks += 1;
            assert!(ticks < 2000);
        }
        assert!(dist(s.position(), p(30.0, 2.0)) <= 0.5);
    }
}
