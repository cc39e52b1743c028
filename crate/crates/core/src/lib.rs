//! Reactive sampling-based replanning for a point robot among moving
//! circular obstacles, with baseline planners and a Monte-Carlo bench.

pub mod baselines;
pub mod bench;
pub mod environment;
pub mod forest;
pub mod geometry;
pub mod planner;
pub mod smarrt;
pub mod utility_map;

pub use environment::{DynamicEnvironment, DynamicObstacle, StaticObstacle};
pub use forest::{NodeId, SearchForest};
pub use geometry::{Circle, Point2, Rect, Segment2};
pub use planner::{PlanError, ReactivePlanner, RobotStatus, TickEvent};
pub use smarrt::{PlannerConfig, Smarrt};
pub use utility_map::{CellIndex, MultiResolutionMap};
