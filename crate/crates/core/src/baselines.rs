//! Four reference replanners: ERRT, DRRT, MP-RRT and EBG-RRT.
//!
//! All of them check the entire remaining path each tick against the same
//! collision zones SMARRT uses. DRRT and MP-RRT also check every tree node
//! each tick. A tick counts as a replan only when the path is found broken;
//! tree maintenance on other ticks is not timed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::DynamicEnvironment;
use crate::forest::{steer, NodeId, SearchForest};
use crate::geometry::{dist, point_in_circle, segment_intersects_circle, Circle, Point2, Segment2};
use crate::planner::{polyline_hits_zones, Hazards, PathFollower, PlanError, ReactivePlanner, RobotStatus, TickEvent};
use crate::smarrt::PlannerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub goal_bias: f64,
    /// Probability of sampling a waypoint of the previous path (ERRT, DRRT)
    /// or the remnant frontier (EBG-RRT).
    pub waypoint_bias: f64,
    /// MP-RRT only: probability of trying to reconnect a fragment root.
    pub subtree_root_bias: f64,
    pub iteration_budget: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { goal_bias: 0.1, waypoint_bias: 0.5, subtree_root_bias: 0.3, iteration_budget: 100_000 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must lie in [0, 1], got {1}")]
    Probability(&'static str, f64),
    #[error("goal_bias + waypoint_bias must not exceed 1")]
    BiasSum,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("goal_bias", self.goal_bias),
            ("waypoint_bias", self.waypoint_bias),
            ("subtree_root_bias", self.subtree_root_bias),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Probability(name, v));
            }
        }
        if self.goal_bias + self.waypoint_bias > 1.0 {
            return Err(ConfigError::BiasSum);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Errt,
    Drrt,
    Mprrt,
    Ebgrrt,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::Errt, Self::Drrt, Self::Mprrt, Self::Ebgrrt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Errt => "errt",
            Self::Drrt => "drrt",
            Self::Mprrt => "mprrt",
            Self::Ebgrrt => "ebgrrt",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "errt" => Ok(Self::Errt),
            "drrt" => Ok(Self::Drrt),
            "mprrt" => Ok(Self::Mprrt),
            "ebgrrt" => Ok(Self::Ebgrrt),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

pub struct Baseline {
    kind: BaselineKind,
    cfg: PlannerConfig,
    bcfg: BaselineConfig,
    forest: SearchForest,
    follower: PathFollower,
    goal: Point2,
    rng: ChaCha8Rng,
    /// Waypoints of the last path, used as sampling targets.
    cache: Vec<Point2>,
    goal_nodes: Vec<NodeId>,
    broken: bool,
    reached: bool,
}

impl Baseline {
    pub fn new(kind: BaselineKind, cfg: PlannerConfig, bcfg: BaselineConfig, rng: ChaCha8Rng) -> Self {
        let forest = SearchForest::new(cfg.steer_step);
        Self {
            kind,
            cfg,
            bcfg,
            forest,
            follower: PathFollower::default(),
            goal: Point2::default(),
            rng,
            cache: Vec::new(),
            goal_nodes: Vec::new(),
            broken: false,
            reached: false,
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn follower(&self) -> &PathFollower {
        &self.follower
    }

    fn t_u(&self) -> f64 {
        self.cfg.effective_t_u(self.cfg.t_u_init)
    }

    fn robot_rooted(&self) -> bool {
        self.kind != BaselineKind::Drrt
    }

    /// Adopt the chain through `node` as the path, oriented robot to goal.
    fn adopt(&mut self, node: NodeId) {
        let mut chain = self.forest.chain_to_root(node).expect("live node");
        if self.robot_rooted() {
            chain.reverse();
            // The root sits where the robot was when it was planted.
            if chain.len() > 1 && dist(self.forest.position(chain[0]), self.follower.position) == 0.0 {
                chain.remove(0);
            }
        }
        self.follower.set_from_chain(&self.forest, chain);
        self.cache = self.follower.remaining_waypoints().to_vec();
        self.broken = false;
    }

    /// Waypoint-biased, goal-biased or uniform sample. Without a bias point
    /// or cached path the waypoint share goes to uniform sampling.
    fn sample(
        &mut self,
        env: &DynamicEnvironment,
        target: Point2,
        bias_point: Option<Point2>,
    ) -> Result<Point2, PlanError> {
        let u: f64 = self.rng.gen();
        if u < self.bcfg.waypoint_bias {
            if let Some(b) = bias_point {
                return Ok(b);
            }
            if !self.cache.is_empty() {
                return Ok(*self.cache.choose(&mut self.rng).expect("non-empty"));
            }
        } else if u < self.bcfg.waypoint_bias + self.bcfg.goal_bias {
            return Ok(target);
        }
        Ok(env.sample_free(&mut self.rng)?)
    }

    /// One extension of the tree labelled `label` towards `target`.
    fn extend(&mut self, env: &DynamicEnvironment, hazards: &Hazards, target: Point2, label: u32) -> Option<NodeId> {
        let near = self.forest.nearest_where(target, |_, n| n.tree_label == label)?;
        let from = self.forest.position(near);
        let new = steer(from, target, self.cfg.steer_step);
        if new == from || !hazards.edge_ok(env, from, new) {
            return None;
        }
        Some(self.forest.insert(new, Some(near)).expect("live parent"))
    }

    /// Attach an exact goal node to `id` when it is close enough.
    fn try_goal(&mut self, env: &DynamicEnvironment, hazards: &Hazards, id: NodeId) -> Option<NodeId> {
        let q = self.forest.position(id);
        if q == self.goal {
            if !self.goal_nodes.contains(&id) {
                self.goal_nodes.push(id);
            }
            return Some(id);
        }
        if dist(q, self.goal) > self.cfg.steer_step || !hazards.edge_ok(env, q, self.goal) {
            return None;
        }
        let g = self.forest.insert(self.goal, Some(id)).expect("live parent");
        self.goal_nodes.push(g);
        Some(g)
    }

    /// Robot-rooted RRT from the robot to the goal. Returns the goal node.
    fn grow_from_robot(&mut self, env: &DynamicEnvironment, hazards: &Hazards, budget: usize) -> Option<NodeId> {
        let p_c = self.follower.position;
        let root = self.forest.insert(p_c, None).expect("root");
        let label = self.forest.label(root);
        if let Some(g) = self.try_goal(env, hazards, root) {
            return Some(g);
        }
        for _ in 0..budget {
            let target = self.sample(env, self.goal, None).ok()?;
            if let Some(id) = self.extend(env, hazards, target, label) {
                if let Some(g) = self.try_goal(env, hazards, id) {
                    return Some(g);
                }
            }
        }
        None
    }

    /// Goal-rooted growth until some node links to the robot. Returns that node.
    fn grow_to_robot(&mut self, env: &DynamicEnvironment, hazards: &Hazards, budget: usize) -> Option<NodeId> {
        let p_c = self.follower.position;
        let root = *self.forest.roots().iter().next()?;
        let label = self.forest.label(root);
        if let Some(n) = self.link_robot(env, hazards) {
            return Some(n);
        }
        for _ in 0..budget {
            let target = self.sample(env, p_c, None).ok()?;
            if let Some(id) = self.extend(env, hazards, target, label) {
                let q = self.forest.position(id);
                if dist(q, p_c) <= self.cfg.steer_step && hazards.edge_ok(env, p_c, q) {
                    return Some(id);
                }
            }
        }
        None
    }

    /// Existing node within a steer step that the robot can drive to.
    fn link_robot(&self, env: &DynamicEnvironment, hazards: &Hazards) -> Option<NodeId> {
        let p_c = self.follower.position;
        let mut near: Vec<(f64, NodeId)> = self
            .forest
            .near_by_distance(p_c, self.cfg.steer_step)
            .into_iter()
            .map(|(d, id)| (d + self.forest.cost_to_root(id), id))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.into_iter().map(|(_, id)| id).find(|&n| hazards.edge_ok(env, p_c, self.forest.position(n)))
    }

    /// Nodes that sit in a zone or whose parent edge crosses one.
    fn colliding_nodes(&self, zones: &[Circle]) -> Vec<NodeId> {
        self.forest
            .iter()
            .filter(|(_, n)| {
                zones.iter().any(|z| point_in_circle(n.position, z))
                    || n.parent.is_some_and(|p| {
                        let s = Segment2::new(n.position, self.forest.position(p));
                        zones.iter().any(|z| segment_intersects_circle(&s, z))
                    })
            })
            .map(|(id, _)| id)
            .collect()
    }

    fn path_broken(&self, zones: &[Circle]) -> bool {
        self.broken
            || self.follower.remaining_nodes().iter().any(|&n| !self.forest.contains(n))
            || polyline_hits_zones(&self.follower.remaining_polyline(), zones)
    }

    fn errt_replan(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> bool {
        self.forest.clear();
        self.goal_nodes.clear();
        match self.grow_from_robot(env, hazards, self.bcfg.iteration_budget) {
            Some(g) => {
                self.adopt(g);
                true
            }
            None => false,
        }
    }

    fn drrt_prune(&mut self, zones: &[Circle]) {
        let Some(&root) = self.forest.roots().iter().next() else {
            return;
        };
        let mut victims = Vec::new();
        for id in self.colliding_nodes(zones) {
            if id != root {
                victims.extend(self.forest.subtree(id));
            }
        }
        self.forest.prune(&victims);
    }

    fn drrt_replan(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> bool {
        match self.grow_to_robot(env, hazards, self.bcfg.iteration_budget) {
            Some(n) => {
                self.adopt(n);
                true
            }
            None => false,
        }
    }

    fn mprrt_prune(&mut self, zones: &[Circle]) {
        let victims = self.colliding_nodes(zones);
        if !victims.is_empty() {
            self.forest.prune(&victims);
            self.forest.floodfill_relabel();
            self.goal_nodes.retain(|&g| self.forest.contains(g));
        }
    }

    fn reachable_goal(&self, label: u32) -> Option<NodeId> {
        self.goal_nodes.iter().copied().find(|&g| self.forest.label(g) == label)
    }

    fn mprrt_replan(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> bool {
        let p_c = self.follower.position;
        let root = self.forest.insert(p_c, None).expect("root");
        let label = self.forest.label(root);
        if let Some(g) = self.try_goal(env, hazards, root) {
            self.adopt(g);
            return true;
        }
        for _ in 0..self.bcfg.iteration_budget {
            let fragment = if self.rng.gen_bool(self.bcfg.subtree_root_bias) {
                let roots: Vec<NodeId> = self.forest.roots().iter().copied().filter(|&r| r != root).collect();
                roots.choose(&mut self.rng).copied()
            } else {
                None
            };
            let new = match fragment {
                Some(f) => {
                    let target = self.forest.position(f);
                    let new = self.extend(env, hazards, target, label);
                    if let Some(n) = new {
                        let q = self.forest.position(n);
                        if dist(q, target) <= self.cfg.steer_step && hazards.edge_ok(env, q, target) {
                            if q == target {
                                // Coincident point: hang the fragment's children instead.
                                let kids = self.forest.get(f).expect("live").children.clone();
                                for k in kids {
                                    self.forest.reparent(k, n).expect("different trees");
                                }
                            } else {
                                self.forest.reparent(f, n).expect("different trees");
                            }
                        }
                    }
                    new
                }
                None => {
                    let Ok(target) = self.sample(env, self.goal, None) else {
                        return false;
                    };
                    self.extend(env, hazards, target, label)
                }
            };
            if let Some(n) = new {
                if let Some(g) = self.reachable_goal(label).or_else(|| self.try_goal(env, hazards, n)) {
                    self.adopt(g);
                    return true;
                }
            }
        }
        false
    }

    /// Keep the goal-connected tail of the path and grow a new tree to it.
    fn ebgrrt_replan(&mut self, env: &DynamicEnvironment, hazards: &Hazards) -> bool {
        let zones = &hazards.zones;
        let nodes = self.follower.remaining_nodes().to_vec();
        let mut keep = 0usize;
        for i in (0..nodes.len()).rev() {
            if !self.forest.contains(nodes[i])
                || zones.iter().any(|z| point_in_circle(self.forest.position(nodes[i]), z))
            {
                break;
            }
            if i + 1 < nodes.len() {
                let s = Segment2::new(self.forest.position(nodes[i]), self.forest.position(nodes[i + 1]));
                if zones.iter().any(|z| segment_intersects_circle(&s, z)) {
                    break;
                }
            }
            keep += 1;
        }
        let remnant: Vec<NodeId> = nodes[nodes.len() - keep..].to_vec();
        let victims: Vec<NodeId> = self.forest.iter().map(|(id, _)| id).filter(|id| !remnant.contains(id)).collect();
        self.forest.prune(&victims);
        self.goal_nodes.retain(|g| remnant.contains(g));
        if remnant.is_empty() {
            return self.grow_from_robot(env, hazards, self.bcfg.iteration_budget).map(|g| self.adopt(g)).is_some();
        }
        let remnant_label = self.forest.label(remnant[0]);
        let frontier = self.forest.position(remnant[0]);

        let p_c = self.follower.position;
        let root = self.forest.insert(p_c, None).expect("root");
        let label = self.forest.label(root);
        let mut candidate = Some(root);
        for _ in 0..=self.bcfg.iteration_budget {
            if let Some(m) = candidate {
                if let Some(done) = self.ebg_connect(env, hazards, m, remnant_label) {
                    self.adopt(done);
                    return true;
                }
            }
            let Ok(target) = self.sample(env, self.goal, Some(frontier)) else {
                return false;
            };
            candidate = self.extend(env, hazards, target, label);
        }
        false
    }

    fn ebg_connect(
        &mut self,
        env: &DynamicEnvironment,
        hazards: &Hazards,
        m: NodeId,
        remnant_label: u32,
    ) -> Option<NodeId> {
        let q = self.forest.position(m);
        let r = self
            .forest
            .near_by_distance(q, self.cfg.steer_step)
            .into_iter()
            .map(|(_, id)| id)
            .filter(|&r| self.forest.label(r) == remnant_label)
            .find(|&r| hazards.edge_ok(env, q, self.forest.position(r)))?;
        self.forest.reroot(r).expect("live");
        self.forest.reparent(r, m).expect("different trees");
        let label = self.forest.label(m);
        self.goal_nodes.iter().copied().find(|&g| self.forest.contains(g) && self.forest.label(g) == label)
    }
}

impl ReactivePlanner for Baseline {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn initial_plan(
        &mut self,
        env: &DynamicEnvironment,
        start: Point2,
        goal: Point2,
    ) -> Result<Vec<Point2>, PlanError> {
        self.forest.clear();
        self.goal_nodes.clear();
        self.cache.clear();
        self.goal = goal;
        self.follower = PathFollower::new(start);
        self.broken = false;
        self.reached = dist(start, goal) <= self.cfg.goal_tolerance;
        // Static obstacles only.
        let hazards = Hazards { zones: Vec::new(), bodies: Vec::new(), robot: start };
        let budget = self.cfg.initial_budget;
        let found = if self.robot_rooted() {
            self.grow_from_robot(env, &hazards, budget)
        } else {
            let g = self.forest.insert(goal, None).expect("root");
            self.goal_nodes.push(g);
            self.grow_to_robot(env, &hazards, budget)
        };
        match found {
            Some(n) => {
                self.adopt(n);
                Ok(self.follower.remaining_polyline())
            }
            None => Err(PlanError::BudgetExhausted(budget)),
        }
    }

    fn tick(&mut self, env: &mut DynamicEnvironment, dt: f64) -> RobotStatus {
        assert!(dt > 0.0, "dt must be positive");
        env.step(dt);
        if self.reached {
            return RobotStatus::idle(self.follower.position, true);
        }
        let mut status = RobotStatus::idle(self.follower.position, false);
        let step = self.cfg.robot_speed * dt;
        let started = Instant::now();
        let hazards = Hazards::new(env, self.t_u(), self.follower.position);
        let before = self.forest.len();
        match self.kind {
            BaselineKind::Drrt => self.drrt_prune(&hazards.zones),
            BaselineKind::Mprrt => self.mprrt_prune(&hazards.zones),
            BaselineKind::Errt | BaselineKind::Ebgrrt => {}
        }
        status.pruned = before - self.forest.len();
        if self.path_broken(&hazards.zones) {
            // A goal covered by a zone cannot be reached this tick.
            let ok = hazards.point_clear(self.goal)
                && match self.kind {
                    BaselineKind::Errt => self.errt_replan(env, &hazards),
                    BaselineKind::Drrt => self.drrt_replan(env, &hazards),
                    BaselineKind::Mprrt => self.mprrt_replan(env, &hazards),
                    BaselineKind::Ebgrrt => self.ebgrrt_replan(env, &hazards),
                };
            status.replanned_this_tick = true;
            status.replan_wall_time = started.elapsed().as_secs_f64();
            status.event = TickEvent::Replan;
            status.replan_succeeded = ok;
            self.broken = !ok;
            if ok {
                self.follower.advance(step);
            }
        } else {
            self.follower.advance(step);
        }
        self.reached = dist(self.follower.position, self.goal) <= self.cfg.goal_tolerance;
        status.position = self.follower.position;
        status.reached_goal = self.reached;
        status
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
}
