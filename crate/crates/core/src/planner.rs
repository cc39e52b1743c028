//! Pieces shared by every reactive planner: the planner interface, the
//! robot's path follower and edge validation against collision zones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{DynamicEnvironment, EnvError};
use crate::forest::{ForestError, NodeId, SearchForest};
use crate::geometry::{dist, point_in_circle, segment_intersects_circle, Circle, Point2, Segment2};
use crate::utility_map::{CellIndex, MapError, UtilityLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("planning budget of {0} extensions exhausted")]
    BudgetExhausted(usize),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TickEvent {
    None,
    /// The path became infeasible and the planner repaired or regrew it.
    Replan,
    /// A shorter route was adopted while the path was still feasible.
    Reroute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotStatus {
    pub position: Point2,
    pub reached_goal: bool,
    pub replanned_this_tick: bool,
    /// Wall-clock seconds spent replanning this tick.
    pub replan_wall_time: f64,
    /// Whether a replan this tick produced a usable path.
    pub replan_succeeded: bool,
    pub event: TickEvent,
    pub pruned: usize,
    pub sampling_cell: Option<CellIndex>,
}

impl RobotStatus {
    pub fn idle(position: Point2, reached_goal: bool) -> Self {
        Self {
            position,
            reached_goal,
            replanned_this_tick: false,
            replan_wall_time: 0.0,
            replan_succeeded: false,
            event: TickEvent::None,
            pruned: 0,
            sampling_cell: None,
        }
    }
}

/// Common surface of SMARRT and the baselines.
pub trait ReactivePlanner: Send {
    fn name(&self) -> &'static str;

    /// Plan from `start` to `goal` against static obstacles.
    fn initial_plan(&mut self, env: &DynamicEnvironment, start: Point2, goal: Point2)
        -> Result<Vec<Point2>, PlanError>;

    /// Advance obstacles and robot by `dt`, replanning when needed.
    fn tick(&mut self, env: &mut DynamicEnvironment, dt: f64) -> RobotStatus;

    fn position(&self) -> Point2;

    /// Remaining path, robot first, goal last.
    fn path(&self) -> Vec<Point2>;

    fn forest(&self) -> &SearchForest;

    fn utility_snapshot(&self) -> Option<Vec<UtilityLevel>> {
        None
    }
}

/// Robot position plus the waypoints still ahead of it.
#[derive(Debug, Clone, Default)]
pub struct PathFollower {
    pub position: Point2,
    waypoints: Vec<Point2>,
    nodes: Vec<NodeId>,
    next: usize,
}

impl PathFollower {
    pub fn new(position: Point2) -> Self {
        Self { position, ..Self::default() }
    }

    pub fn set_path(&mut self, nodes: Vec<NodeId>, waypoints: Vec<Point2>) {
        debug_assert_eq!(nodes.len(), waypoints.len());
        self.nodes = nodes;
        self.waypoints = waypoints;
        self.next = 0;
    }

    pub fn set_from_chain(&mut self, forest: &SearchForest, chain: Vec<NodeId>) {
        let pts = chain.iter().map(|&id| forest.position(id)).collect();
        self.set_path(chain, pts);
    }

    pub fn has_path(&self) -> bool {
        !self.waypoints.is_empty()
    }

    pub fn remaining_nodes(&self) -> &[NodeId] {
        &self.nodes[self.next.min(self.nodes.len())..]
    }

    pub fn remaining_waypoints(&self) -> &[Point2] {
        &self.waypoints[self.next.min(self.waypoints.len())..]
    }

    /// The robot position followed by every waypoint still ahead.
    pub fn remaining_polyline(&self) -> Vec<Point2> {
        let mut out = Vec::with_capacity(self.waypoints.len() - self.next + 1);
        out.push(self.position);
        out.extend_from_slice(self.remaining_waypoints());
        out
    }

    pub fn remaining_length(&self) -> f64 {
        polyline_length(&self.remaining_polyline())
    }

    /// Remaining path truncated at arc length `len`.
    pub fn horizon(&self, len: f64) -> Vec<Point2> {
        truncate_polyline(&self.remaining_polyline(), len)
    }

    /// Move `distance` along the path. Returns whether a waypoint was reached.
    pub fn advance(&mut self, mut distance: f64) -> bool {
        let mut reached = false;
        while self.next < self.waypoints.len() {
            let w = self.waypoints[self.next];
            let d = dist(self.position, w);
            if d <= distance {
                distance -= d;
                self.position = w;
                self.next += 1;
                reached = true;
            } else {
                if distance > 0.0 {
                    self.position = self.position.lerp(w, distance / d);
                }
                break;
            }
        }
        reached
    }
}

pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Prefix of `points` with arc length `len` (end point interpolated).
pub fn truncate_polyline(points: &[Point2], len: f64) -> Vec<Point2> {
    let mut out = Vec::new();
    let Some(&first) = points.first() else {
        return out;
    };
    out.push(first);
    let mut left = len;
    for w in points.windows(2) {
        let d = dist(w[0], w[1]);
        if d >= left {
            if d > 0.0 {
                out.push(w[0].lerp(w[1], left / d));
            }
            return out;
        }
        left -= d;
        out.push(w[1]);
    }
    out
}

/// Point at arc length `len` along the polyline (its end when shorter).
pub fn point_along(points: &[Point2], len: f64) -> Option<Point2> {
    truncate_polyline(points, len).last().copied()
}

/// Strict test: does any piece of the polyline touch any zone?
pub fn polyline_hits_zones(points: &[Point2], zones: &[Circle]) -> bool {
    if points.len() == 1 {
        return zones.iter().any(|z| point_in_circle(points[0], z));
    }
    points.windows(2).any(|w| {
        let s = Segment2::new(w[0], w[1]);
        zones.iter().any(|z| segment_intersects_circle(&s, z))
    })
}

/// Collision zones and obstacle bodies at one instant, seen from the robot.
///
/// Edges are rejected when they touch a zone, with one exception: when the
/// robot already sits inside a zone, an edge leaving the robot is allowed
/// as long as it does not bring the robot closer to that obstacle.
#[derive(Debug, Clone)]
pub struct Hazards {
    pub zones: Vec<Circle>,
    pub bodies: Vec<Circle>,
    pub robot: Point2,
}

impl Hazards {
    pub fn new(env: &DynamicEnvironment, t_u: f64, robot: Point2) -> Self {
        Self { zones: env.collision_zones(t_u), bodies: env.dynamics.iter().map(|o| o.body()).collect(), robot }
    }

    pub fn point_clear(&self, p: Point2) -> bool {
        self.zones.iter().all(|z| !point_in_circle(p, z))
    }

    /// Zone test for one edge, with the escape exception for edges at the robot.
    pub fn edge_clear(&self, a: Point2, b: Point2) -> bool {
        let (from, to) = if b == self.robot { (b, a) } else { (a, b) };
        let at_robot = from == self.robot;
        let s = Segment2::new(from, to);
        self.zones.iter().zip(&self.bodies).all(|(z, body)| {
            if at_robot && point_in_circle(from, z) {
                moving_away(from, to, z.center) && !segment_intersects_circle(&s, body)
            } else {
                !segment_intersects_circle(&s, z)
            }
        })
    }

    pub fn edge_ok(&self, env: &DynamicEnvironment, a: Point2, b: Point2) -> bool {
        env.segment_free_static(&Segment2::new(a, b)) && self.edge_clear(a, b)
    }

    /// Horizon check for a candidate path starting at the robot, using the
    /// escape exception for zones that already contain the robot.
    pub fn horizon_clear(&self, points: &[Point2], len: f64) -> bool {
        let h = truncate_polyline(points, len);
        if h.len() < 2 {
            return h
                .first()
                .is_none_or(|&p| self.zones.iter().all(|z| !point_in_circle(p, z) || point_in_circle(self.robot, z)));
        }
        h.windows(2).enumerate().all(|(i, w)| {
            let s = Segment2::new(w[0], w[1]);
            self.zones.iter().zip(&self.bodies).all(|(z, body)| {
                if point_in_circle(self.robot, z) {
                    (i > 0 || moving_away(w[0], w[1], z.center)) && !segment_intersects_circle(&s, body)
                } else {
                    !segment_intersects_circle(&s, z)
                }
            })
        })
    }
}

fn moving_away(from: Point2, to: Point2, center: Point2) -> bool {
    (to.x - from.x) * (from.x - center.x) + (to.y - from.y) * (from.y - center.y) >= 0.0
}
