//! Scenario files, single trials, Monte-Carlo campaigns, the results CSV and
//! the per-tick trace stream.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{Baseline, BaselineConfig, BaselineKind};
use crate::environment::{DynamicEnvironment, DynamicObstacle, StaticObstacle};
use crate::geometry::{dist, segment_intersects_circle, Circle, Point2, Rect, Segment2};
use crate::planner::{ReactivePlanner, TickEvent};
use crate::smarrt::{PlannerConfig, Smarrt};
use crate::utility_map::{CellIndex, UtilityLevel};

pub const CSV_HEADER: &str = "scenario_id,planner,seed,n_obstacles,obstacle_speed,success,travel_time_s,n_replans,avg_replan_time_s,total_replan_time_s";

/// Columns that hold wall-clock measurements and so differ between runs.
pub const TIMING_COLUMNS: [&str; 2] = ["avg_replan_time_s", "total_replan_time_s"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    /// Dotted field path, e.g. `obstacles[2].speed`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue { path: path.into(), message: message.into() }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid input: {}", join_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("unknown planner {0:?} (expected smarrt, errt, drrt, mprrt or ebgrrt)")]
    UnknownPlanner(String),
    #[error("{}: header does not match the results schema", path.display())]
    Header { path: PathBuf },
    #[error("{}: row ({scenario_id}, {planner}, {seed}) is not part of this campaign", path.display())]
    ForeignRow { path: PathBuf, scenario_id: String, planner: String, seed: u64 },
    #[error("scenario {0}: could not place obstacles clear of start, goal and static obstacles")]
    Placement(String),
    #[error("trace output: {0}")]
    Trace(io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub radius: f64,
    pub speed: f64,
    pub initial_position: Point2,
}

fn default_dt() -> f64 {
    0.05
}

fn default_max_sim_time() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub bounds: Rect,
    pub start: Point2,
    pub goal: Point2,
    pub robot_speed: f64,
    pub min_cell: f64,
    #[serde(default)]
    pub statics: Vec<StaticObstacle>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_sim_time")]
    pub max_sim_time: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::open_area(Vec::new())
    }
}

impl ScenarioSpec {
    /// 32 m × 32 m open area, start (2, 30), goal (30, 2), robot at 4 m/s.
    pub fn open_area(obstacles: Vec<ObstacleSpec>) -> Self {
        Self {
            bounds: Rect::new(Point2::new(0.0, 0.0), Point2::new(32.0, 32.0)),
            start: Point2::new(2.0, 30.0),
            goal: Point2::new(30.0, 2.0),
            robot_speed: 4.0,
            min_cell: 1.0,
            statics: Vec::new(),
            obstacles,
            master_seed: 0,
            dt: default_dt(),
            max_sim_time: default_max_sim_time(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
        let spec = Self::from_json(&text).map_err(|source| BenchError::Json { path: path.into(), source })?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let issues = self.validate();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Invalid(issues))
        }
    }

    /// Every problem with the scenario, each tagged with its field path.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut out = Vec::new();
        let b = self.bounds;
        let bounds_ok = b.min.is_finite() && b.max.is_finite() && b.min.x < b.max.x && b.min.y < b.max.y;
        if !bounds_ok {
            out.push(issue("bounds", "min must be strictly below max in both axes"));
        }
        positive(&mut out, "robot_speed", self.robot_speed);
        positive(&mut out, "min_cell", self.min_cell);
        positive(&mut out, "dt", self.dt);
        positive(&mut out, "max_sim_time", self.max_sim_time);
        for (i, s) in self.statics.iter().enumerate() {
            let ok = match s {
                StaticObstacle::Circle(c) => c.center.is_finite() && c.radius.is_finite() && c.radius >= 0.0,
                StaticObstacle::Rect(r) => {
                    r.min.is_finite() && r.max.is_finite() && r.min.x <= r.max.x && r.min.y <= r.max.y
                }
            };
            if !ok {
                out.push(issue(format!("statics[{i}]"), "malformed shape"));
            }
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if bounds_ok && !b.contains(p) {
                out.push(issue(name, "outside bounds"));
            } else if self.statics.iter().any(|s| s.contains(p)) {
                out.push(issue(name, "inside a static obstacle"));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius.is_finite() && o.radius > 0.0) {
                out.push(issue(format!("obstacles[{i}].radius"), "must be a positive number"));
            }
            if !(o.speed.is_finite() && o.speed >= 0.0) {
                out.push(issue(format!("obstacles[{i}].speed"), "must be a non-negative number"));
            }
            if bounds_ok && !b.contains(o.initial_position) {
                out.push(issue(format!("obstacles[{i}].initial_position"), "outside bounds"));
            }
        }
        out
    }

    /// Fastest obstacle speed, reported as the scenario's obstacle speed.
    pub fn obstacle_speed(&self) -> f64 {
        self.obstacles.iter().map(|o| o.speed).fold(0.0, f64::max)
    }

    pub fn environment(&self, rng: ChaCha8Rng) -> DynamicEnvironment {
        let dynamics =
            self.obstacles.iter().map(|o| DynamicObstacle::new(o.initial_position, o.radius, o.speed)).collect();
        DynamicEnvironment::new(self.bounds, self.statics.clone(), dynamics, rng)
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig { robot_speed: self.robot_speed, min_cell: self.min_cell, ..PlannerConfig::default() }
    }
}

fn positive(out: &mut Vec<ValidationIssue>, name: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        out.push(issue(name, "must be a positive number"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlannerName {
    Smarrt,
    Baseline(BaselineKind),
}

impl PlannerName {
    pub const ALL: [PlannerName; 5] = [
        Self::Smarrt,
        Self::Baseline(BaselineKind::Errt),
        Self::Baseline(BaselineKind::Drrt),
        Self::Baseline(BaselineKind::Mprrt),
        Self::Baseline(BaselineKind::Ebgrrt),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Smarrt => "smarrt",
            Self::Baseline(k) => k.name(),
        }
    }

    pub fn build(self, cfg: PlannerConfig, rng: ChaCha8Rng) -> Box<dyn ReactivePlanner> {
        match self {
            Self::Smarrt => Box::new(Smarrt::new(cfg, rng)),
            Self::Baseline(k) => Box::new(Baseline::new(k, cfg, BaselineConfig::default(), rng)),
        }
    }
}

impl fmt::Display for PlannerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerName {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("smarrt") {
            return Ok(Self::Smarrt);
        }
        s.parse::<BaselineKind>().map(Self::Baseline).map_err(|_| BenchError::UnknownPlanner(s.to_string()))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two seeds.
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Independent generators for the obstacles and the planner of one trial.
pub fn trial_rngs(master_seed: u64, seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let s = mix_seeds(master_seed, seed);
    let mut env = ChaCha8Rng::seed_from_u64(s);
    env.set_stream(0);
    let mut planner = ChaCha8Rng::seed_from_u64(s);
    planner.set_stream(1);
    (env, planner)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario_id: String,
    pub planner: String,
    pub seed: u64,
    pub n_obstacles: usize,
    pub obstacle_speed: f64,
    pub success: bool,
    pub travel_time_s: f64,
    pub n_replans: usize,
    pub avg_replan_time_s: f64,
    pub total_replan_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reached,
    Collision,
    Timeout,
    /// No initial path against the static obstacles.
    NoInitialPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub result: TrialResult,
    pub outcome: Outcome,
}

/// One line of the trace stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub robot: Point2,
    /// `[x, y, radius]` per moving obstacle.
    pub obstacles: Vec<[f64; 3]>,
    pub path: Vec<Point2>,
    pub event: TickEvent,
    pub replan_ms: f64,
    #[serde(default)]
    pub pruned: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_cell: Option<CellIndex>,
    /// Utility grids after a replan, finest level first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<Vec<UtilityLevel>>,
}

pub struct TraceSink<'a> {
    pub out: &'a mut dyn Write,
    /// Include the utility grids on replan ticks.
    pub utility: bool,
}

impl TraceSink<'_> {
    fn emit(&mut self, rec: &TraceRecord) -> Result<(), BenchError> {
        serde_json::to_writer(&mut *self.out, rec).map_err(|e| BenchError::Trace(e.into()))?;
        self.out.write_all(b"\n").map_err(BenchError::Trace)
    }
}

/// True when the robot touched an obstacle during the last tick. Besides
/// the end point, the robot's swept segment is tested against each body
/// grown by the distance that obstacle can cover in one tick.
pub fn tick_collision(env: &DynamicEnvironment, from: Point2, to: Point2, dt: f64) -> bool {
    if env.robot_in_collision(to) {
        return true;
    }
    let seg = Segment2::new(from, to);
    env.dynamics.iter().any(|o| segment_intersects_circle(&seg, &Circle::new(o.position, o.radius + o.speed * dt)))
        || env.statics.iter().any(|s| s.intersects_segment(&seg))
}

pub fn run_trial(
    spec: &ScenarioSpec,
    scenario_id: &str,
    planner: PlannerName,
    seed: u64,
    mut trace: Option<TraceSink<'_>>,
) -> Result<TrialReport, BenchError> {
    spec.check()?;
    let (env_rng, planner_rng) = trial_rngs(spec.master_seed, seed);
    let mut env = spec.environment(env_rng);
    let mut robot = planner.build(spec.planner_config(), planner_rng);
    let mut result = TrialResult {
        scenario_id: scenario_id.to_string(),
        planner: planner.to_string(),
        seed,
        n_obstacles: spec.obstacles.len(),
        obstacle_speed: spec.obstacle_speed(),
        success: false,
        travel_time_s: 0.0,
        n_replans: 0,
        avg_replan_time_s: 0.0,
        total_replan_time_s: 0.0,
    };
    let finish = |mut result: TrialResult, outcome: Outcome| {
        result.success = outcome == Outcome::Reached;
        if result.n_replans > 0 {
            result.avg_replan_time_s = result.total_replan_time_s / result.n_replans as f64;
        }
        Ok(TrialReport { result, outcome })
    };
    if robot.initial_plan(&env, spec.start, spec.goal).is_err() {
        return finish(result, Outcome::NoInitialPath);
    }
    if env.robot_in_collision(spec.start) {
        return finish(result, Outcome::Collision);
    }
    let steps = (spec.max_sim_time / spec.dt).ceil() as u64;
    for k in 1..=steps {
        let before = robot.position();
        let status = robot.tick(&mut env, spec.dt);
        // Rounded so the CSV shows 11.45 rather than 11.450000000000001.
        let t = (k as f64 * spec.dt * 1e9).round() / 1e9;
        result.travel_time_s = t;
        if status.replanned_this_tick {
            result.n_replans += 1;
            result.total_replan_time_s += status.replan_wall_time;
        }
        if let Some(sink) = trace.as_mut() {
            let rec = TraceRecord {
                t,
                robot: status.position,
                obstacles: env.dynamics.iter().map(|o| [o.position.x, o.position.y, o.radius]).collect(),
                path: robot.path(),
                event: status.event,
                replan_ms: status.replan_wall_time * 1e3,
                pruned: status.pruned,
                sampling_cell: status.sampling_cell,
                utility: if sink.utility && status.replanned_this_tick { robot.utility_snapshot() } else { None },
            };
            sink.emit(&rec)?;
        }
        if tick_collision(&env, before, status.position, spec.dt) {
            return finish(result, Outcome::Collision);
        }
        if status.reached_goal {
            return finish(result, Outcome::Reached);
        }
    }
    finish(result, Outcome::Timeout)
}

fn default_clearance() -> f64 {
    4.0
}

fn default_radius() -> f64 {
    1.0
}

/// Full-factorial campaign over obstacle counts and speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub obstacle_counts: Vec<usize>,
    pub speeds: Vec<f64>,
    pub scenarios_per_combination: usize,
    pub trials_per_scenario: usize,
    pub planners: Vec<String>,
    #[serde(default)]
    pub campaign_seed: u64,
    /// Minimum distance from start and goal to a generated obstacle centre.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_radius")]
    pub obstacle_radius: f64,
    /// Map, robot and timing settings; its obstacle list is ignored.
    #[serde(default)]
    pub base: ScenarioSpec,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| BenchError::Json { path: path.into(), source })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let mut out = Vec::new();
        if self.obstacle_counts.is_empty() {
            out.push(issue("obstacle_counts", "must not be empty"));
        }
        if self.speeds.is_empty() {
            out.push(issue("speeds", "must not be empty"));
        }
        for (i, v) in self.speeds.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                out.push(issue(format!("speeds[{i}]"), "must be a non-negative number"));
            }
        }
        if self.scenarios_per_combination == 0 {
            out.push(issue("scenarios_per_combination", "must be at least 1"));
        }
        if self.trials_per_scenario == 0 {
            out.push(issue("trials_per_scenario", "must be at least 1"));
        }
        if self.planners.is_empty() {
            out.push(issue("planners", "must not be empty"));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.planners.iter().enumerate() {
            match p.parse::<PlannerName>() {
                Ok(name) if !seen.insert(name) => out.push(issue(format!("planners[{i}]"), "listed twice")),
                Ok(_) => {}
                Err(e) => out.push(issue(format!("planners[{i}]"), e.to_string())),
            }
        }
        if !(self.clearance.is_finite() && self.clearance >= 0.0) {
            out.push(issue("clearance", "must be a non-negative number"));
        }
        positive(&mut out, "obstacle_radius", self.obstacle_radius);
        out.extend(self.base.validate().into_iter().map(|mut i| {
            i.path = format!("base.{}", i.path);
            i
        }));
        if out.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Invalid(out))
        }
    }

    pub fn planner_names(&self) -> Result<Vec<PlannerName>, BenchError> {
        self.planners.iter().map(|p| p.parse()).collect()
    }

    /// Expected number of result rows.
    pub fn row_count(&self) -> usize {
        self.obstacle_counts.len()
            * self.speeds.len()
            * self.scenarios_per_combination
            * self.trials_per_scenario
            * self.planners.len()
    }

    /// The fixed scenarios of the campaign, in combination order.
    pub fn scenarios(&self) -> Result<Vec<(String, ScenarioSpec)>, BenchError> {
        let mut out = Vec::new();
        for (ci, &count) in self.obstacle_counts.iter().enumerate() {
            for (si, &speed) in self.speeds.iter().enumerate() {
                for k in 0..self.scenarios_per_combination {
                    let id = format!("n{count}-v{speed}-s{k}");
                    let seed = mix_seeds(mix_seeds(mix_seeds(self.campaign_seed, ci as u64), si as u64), k as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut spec = self.base.clone();
                    spec.master_seed = rng.gen();
                    spec.obstacles = (0..count)
                        .map(|_| self.place_obstacle(&spec, speed, &mut rng))
                        .collect::<Option<_>>()
                        .ok_or_else(|| BenchError::Placement(id.clone()))?;
                    out.push((id, spec));
                }
            }
        }
        Ok(out)
    }

    fn place_obstacle(&self, spec: &ScenarioSpec, speed: f64, rng: &mut ChaCha8Rng) -> Option<ObstacleSpec> {
        let r = self.obstacle_radius;
        let b = spec.bounds;
        if b.width() <= 2.0 * r || b.height() <= 2.0 * r {
            return None;
        }
        for _ in 0..10_000 {
            let p = Point2::new(rng.gen_range(b.min.x + r..b.max.x - r), rng.gen_range(b.min.y + r..b.max.y - r));
            let clear_of_statics = spec.statics.iter().all(|s| match s {
                StaticObstacle::Circle(c) => dist(p, c.center) > c.radius + r,
                StaticObstacle::Rect(rect) => rect.distance_to_point(p) > r,
            });
            if clear_of_statics && dist(p, spec.start) >= self.clearance && dist(p, spec.goal) >= self.clearance {
                return Some(ObstacleSpec { radius: r, speed, initial_position: p });
            }
        }
        None
    }
}

type RowKey = (String, String, u64);

/// (obstacle count, speed bits, planner rank and name).
type GroupKey = (usize, u64, (usize, String));

fn key_of(r: &TrialResult) -> RowKey {
    (r.scenario_id.clone(), r.planner.clone(), r.seed)
}

pub fn read_results(path: &Path) -> Result<Vec<TrialResult>, BenchError> {
    let file = fs::File::open(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
    read_results_from(file, path)
}

fn read_results_from<R: io::Read>(input: R, path: &Path) -> Result<Vec<TrialResult>, BenchError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|source| BenchError::Csv { path: path.into(), source })?;
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(BenchError::Header { path: path.into() });
    }
    reader
        .deserialize()
        .collect::<Result<Vec<TrialResult>, _>>()
        .map_err(|source| BenchError::Csv { path: path.into(), source })
}

pub fn results_to_csv(rows: &[TrialResult]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 CSV");
    format!("{CSV_HEADER}\n{body}")
}

/// Write `rows` to `path` through a temporary file, so a crash never leaves
/// a truncated CSV behind.
pub fn write_results(path: &Path, rows: &[TrialResult]) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io { path: path.into(), source };
    let tmp = path.with_extension("csv.partial");
    fs::write(&tmp, results_to_csv(rows)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// CSV text with the named columns removed.
pub fn drop_columns(csv_text: &str, columns: &[&str]) -> String {
    let mut lines = csv_text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !columns.contains(&h)).collect();
    let project = |line: &str| {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
        let rec = rdr.records().next().and_then(Result::ok).unwrap_or_default();
        w.write_record(rec.iter().zip(&keep).filter(|(_, k)| **k).map(|(f, _)| f)).expect("in-memory");
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    };
    std::iter::once(header).chain(lines).map(project).collect()
}

/// Run every missing trial of the campaign and (re)write `out`.
///
/// Rows already present in `out` are kept and their trials skipped, so an
/// interrupted campaign resumes where it stopped. The file is rewritten
/// after each scenario.
pub fn run_campaign(cfg: &CampaignConfig, out: &Path) -> Result<Vec<TrialResult>, BenchError> {
    cfg.check()?;
    let planners = cfg.planner_names()?;
    let scenarios = cfg.scenarios()?;
    let scenario_rank: HashMap<&str, usize> =
        scenarios.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let planner_rank: HashMap<String, usize> = planners.iter().enumerate().map(|(i, p)| (p.to_string(), i)).collect();

    let mut done: BTreeMap<RowKey, TrialResult> = BTreeMap::new();
    if out.exists() {
        for row in read_results(out)? {
            let known = scenario_rank.contains_key(row.scenario_id.as_str())
                && planner_rank.contains_key(&row.planner)
                && row.seed < cfg.trials_per_scenario as u64;
            if !known {
                return Err(BenchError::ForeignRow {
                    path: out.into(),
                    scenario_id: row.scenario_id,
                    planner: row.planner,
                    seed: row.seed,
                });
            }
            done.insert(key_of(&row), row);
        }
    }
    let sort = |rows: &mut Vec<TrialResult>| {
        rows.sort_by_key(|r| (scenario_rank[r.scenario_id.as_str()], planner_rank[&r.planner], r.seed));
    };

    for (id, spec) in &scenarios {
        let jobs: Vec<(PlannerName, u64)> = planners
            .iter()
            .flat_map(|&p| (0..cfg.trials_per_scenario as u64).map(move |s| (p, s)))
            .filter(|(p, s)| !done.contains_key(&(id.clone(), p.to_string(), *s)))
            .collect();
        if jobs.is_empty() {
            continue;
        }
        let fresh: Vec<TrialResult> = jobs
            .par_iter()
            .map(|&(p, s)| run_trial(spec, id, p, s, None).map(|r| r.result))
            .collect::<Result<_, _>>()?;
        for row in fresh {
            done.insert(key_of(&row), row);
        }
        let mut rows: Vec<TrialResult> = done.values().cloned().collect();
        sort(&mut rows);
        write_results(out, &rows)?;
    }
    let mut rows: Vec<TrialResult> = done.into_values().collect();
    sort(&mut rows);
    if !out.exists() {
        write_results(out, &rows)?;
    }
    Ok(rows)
}

/// Median of the values; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub n_obstacles: usize,
    pub obstacle_speed: f64,
    pub planner: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful trials only.
    pub median_travel_time_s: Option<f64>,
    /// Over trials that replanned at least once; 0 when none did.
    pub median_avg_replan_time_s: f64,
    pub replanning_trials: usize,
    /// Set when no trial in the group replanned.
    pub no_replans: bool,
}

fn planner_order(name: &str) -> (usize, String) {
    let rank = PlannerName::ALL.iter().position(|p| p.as_str() == name).unwrap_or(PlannerName::ALL.len());
    (rank, name.to_string())
}

/// Per (obstacle count, speed, planner) statistics.
pub fn summarize(rows: &[TrialResult]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialResult>> = BTreeMap::new();
    for r in rows {
        // Non-negative floats order like their bit patterns.
        groups.entry((r.n_obstacles, r.obstacle_speed.to_bits(), planner_order(&r.planner))).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((n, speed, (_, planner)), rs)| {
            let successes = rs.iter().filter(|r| r.success).count();
            let travel: Vec<f64> = rs.iter().filter(|r| r.success).map(|r| r.travel_time_s).collect();
            let replan: Vec<f64> = rs.iter().filter(|r| r.n_replans > 0).map(|r| r.avg_replan_time_s).collect();
            GroupSummary {
                n_obstacles: n,
                obstacle_speed: f64::from_bits(speed),
                planner,
                trials: rs.len(),
                successes,
                success_rate: successes as f64 / rs.len() as f64,
                median_travel_time_s: median(&travel),
                median_avg_replan_time_s: median(&replan).unwrap_or(0.0),
                replanning_trials: replan.len(),
                no_replans: replan.is_empty(),
            }
        })
        .collect()
}

pub fn format_summary(groups: &[GroupSummary]) -> String {
    let mut s = format!(
        "{:>4} {:>6} {:<8} {:>7} {:>8} {:>12} {:>16}\n",
        "obs", "speed", "planner", "trials", "success", "travel_s", "avg_replan_s"
    );
    for g in groups {
        let travel = g.median_travel_time_s.map_or("-".to_string(), |t| format!("{t:.3}"));
        let flag = if g.no_replans { " (no replans)" } else { "" };
        s.push_str(&format!(
            "{:>4} {:>6} {:<8} {:>7} {:>7.1}% {:>12} {:>16.6}{}\n",
            g.n_obstacles,
            g.obstacle_speed,
            g.planner,
            g.trials,
            100.0 * g.success_rate,
            travel,
            g.median_avg_replan_time_s,
            flag
        ));
    }
    s
}
