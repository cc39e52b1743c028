//! Workspace, static obstacles and randomly wandering circular obstacles.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    dist, point_in_circle, segment_intersects_circle, segment_intersects_rect, Circle, Point2, Rect, Segment2,
};

/// Longest leg an obstacle travels before picking a new heading.
pub const MAX_LEG_DISTANCE: f64 = 10.0;
/// Rejection budget of [`DynamicEnvironment::sample_free`].
pub const SAMPLE_REJECTION_LIMIT: usize = 10_000;

const CONTACT_EPS: f64 = 1e-9;
const HEADING_RETRIES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("no free sample found after {0} rejections")]
    NoFreeSpace(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    pub position: Point2,
    pub radius: f64,
    pub speed: f64,
    pub heading: f64,
    pub remaining_distance: f64,
    /// Total distance travelled so far.
    #[serde(default)]
    pub odometer: f64,
}

impl DynamicObstacle {
    /// A fresh obstacle draws its first heading and leg length on its first step.
    pub fn new(position: Point2, radius: f64, speed: f64) -> Self {
        Self { position, radius, speed, heading: 0.0, remaining_distance: 0.0, odometer: 0.0 }
    }

    pub fn body(&self) -> Circle {
        Circle::new(self.position, self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticObstacle {
    Circle(Circle),
    Rect(Rect),
}

impl StaticObstacle {
    pub fn contains(&self, p: Point2) -> bool {
        match self {
            StaticObstacle::Circle(c) => point_in_circle(p, c),
            StaticObstacle::Rect(r) => r.contains(p),
        }
    }

    pub fn intersects_segment(&self, s: &Segment2) -> bool {
        match self {
            StaticObstacle::Circle(c) => segment_intersects_circle(s, c),
            StaticObstacle::Rect(r) => segment_intersects_rect(s, r),
        }
    }

    pub fn within(&self, bounds: &Rect) -> bool {
        match self {
            StaticObstacle::Circle(c) => bounds.contains_circle(c),
            StaticObstacle::Rect(r) => bounds.contains_rect(r),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicEnvironment {
    pub bounds: Rect,
    pub statics: Vec<StaticObstacle>,
    pub dynamics: Vec<DynamicObstacle>,
    rng: ChaCha8Rng,
}

impl DynamicEnvironment {
    pub fn new(bounds: Rect, statics: Vec<StaticObstacle>, dynamics: Vec<DynamicObstacle>, rng: ChaCha8Rng) -> Self {
        Self { bounds, statics, dynamics, rng }
    }

    /// Advance every moving obstacle by `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        assert!(dt > 0.0, "dt must be positive, got {dt}");
        let Self { bounds, statics, dynamics, rng } = self;
        for ob in dynamics.iter_mut() {
            advance_obstacle(ob, dt, bounds, statics, rng);
        }
    }

    /// One zone per moving obstacle: its body grown by the distance it covers in `2 t_u`.
    pub fn collision_zones(&self, t_u: f64) -> Vec<Circle> {
        self.dynamics.iter().map(|o| Circle::new(o.position, o.radius + 2.0 * t_u * o.speed)).collect()
    }

    pub fn robot_in_collision(&self, p: Point2) -> bool {
        self.dynamics.iter().any(|o| point_in_circle(p, &o.body())) || self.statics.iter().any(|s| s.contains(p))
    }

    pub fn point_free_static(&self, p: Point2) -> bool {
        self.bounds.contains(p) && !self.statics.iter().any(|s| s.contains(p))
    }

    pub fn segment_free_static(&self, s: &Segment2) -> bool {
        self.bounds.contains(s.a) && self.bounds.contains(s.b) && !self.statics.iter().any(|o| o.intersects_segment(s))
    }

    /// Uniform rejection sample over the bounds, avoiding static obstacles.
    pub fn sample_free<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point2, EnvError> {
        for _ in 0..SAMPLE_REJECTION_LIMIT {
            let p = Point2::new(
                rng.gen_range(self.bounds.min.x..=self.bounds.max.x),
                rng.gen_range(self.bounds.min.y..=self.bounds.max.y),
            );
            if self.point_free_static(p) {
                return Ok(p);
            }
        }
        Err(EnvError::NoFreeSpace(SAMPLE_REJECTION_LIMIT))
    }
}

fn draw_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(0.0..TAU)
}

fn draw_leg<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 10]
    MAX_LEG_DISTANCE * (1.0 - rng.gen::<f64>())
}

/// Outward normals (pointing back into free space) of everything the body touches.
fn contact_normals(ob: &DynamicObstacle, bounds: &Rect, statics: &[StaticObstacle]) -> Vec<(f64, f64)> {
    let mut normals = Vec::new();
    let (c, r) = (ob.position, ob.radius);
    if c.x - r <= bounds.min.x + CONTACT_EPS {
        normals.push((1.0, 0.0));
    }
    if c.x + r >= bounds.max.x - CONTACT_EPS {
        normals.push((-1.0, 0.0));
    }
    if c.y - r <= bounds.min.y + CONTACT_EPS {
        normals.push((0.0, 1.0));
    }
    if c.y + r >= bounds.max.y - CONTACT_EPS {
        normals.push((0.0, -1.0));
    }
    for s in statics {
        match s {
            StaticObstacle::Circle(sc) => {
                let d = dist(c, sc.center);
                if d <= r + sc.radius + CONTACT_EPS {
                    if d > 0.0 {
                        normals.push(((c.x - sc.center.x) / d, (c.y - sc.center.y) / d));
                    } else {
                        normals.push((1.0, 0.0));
                    }
                }
            }
            StaticObstacle::Rect(sr) => {
                let grown = sr.inflate(r + CONTACT_EPS);
                if grown.contains(c) {
                    // Nearest face of the inflated box.
                    let faces = [
                        (c.x - grown.min.x, (-1.0, 0.0)),
                        (grown.max.x - c.x, (1.0, 0.0)),
                        (c.y - grown.min.y, (0.0, -1.0)),
                        (grown.max.y - c.y, (0.0, 1.0)),
                    ];
                    let (_, n) = faces.into_iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("four faces");
                    normals.push(n);
                }
            }
        }
    }
    normals
}

fn moves_away(heading: f64, normals: &[(f64, f64)]) -> bool {
    let (ux, uy) = (heading.cos(), heading.sin());
    normals.iter().all(|&(nx, ny)| ux * nx + uy * ny > 0.0)
}

/// Distance along `heading` until the body first touches a wall or static obstacle.
fn distance_to_contact(ob: &DynamicObstacle, bounds: &Rect, statics: &[StaticObstacle]) -> f64 {
    let (ux, uy) = (ob.heading.cos(), ob.heading.sin());
    let (c, r) = (ob.position, ob.radius);
    let mut best = f64::INFINITY;
    if ux > 0.0 {
        best = best.min((bounds.max.x - r - c.x) / ux);
    } else if ux < 0.0 {
        best = best.min((bounds.min.x + r - c.x) / ux);
    }
    if uy > 0.0 {
        best = best.min((bounds.max.y - r - c.y) / uy);
    } else if uy < 0.0 {
        best = best.min((bounds.min.y + r - c.y) / uy);
    }
    for s in statics {
        let hit = match s {
            StaticObstacle::Circle(sc) => ray_circle_entry(c, (ux, uy), sc.center, sc.radius + r),
            StaticObstacle::Rect(sr) => ray_box_entry(c, (ux, uy), &sr.inflate(r)),
        };
        if let Some(t) = hit {
            best = best.min(t);
        }
    }
    best.max(0.0)
}

fn ray_circle_entry(o: Point2, (ux, uy): (f64, f64), center: Point2, radius: f64) -> Option<f64> {
    let (fx, fy) = (o.x - center.x, o.y - center.y);
    let c = fx * fx + fy * fy - radius * radius;
    if c <= 0.0 {
        return None;
    }
    let b = fx * ux + fy * uy;
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    (disc >= 0.0).then(|| -b - disc.sqrt())
}

fn ray_box_entry(o: Point2, (ux, uy): (f64, f64), b: &Rect) -> Option<f64> {
    if b.contains(o) {
        return None;
    }
    let mut t0 = 0.0_f64;
    let mut t1 = f64::INFINITY;
    for (origin, dir, lo, hi) in [(o.x, ux, b.min.x, b.max.x), (o.y, uy, b.min.y, b.max.y)] {
        if dir == 0.0 {
            if origin < lo || origin > hi {
                return None;
            }
        } else {
            let (mut ta, mut tb) = ((lo - origin) / dir, (hi - origin) / dir);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(t0)
}

fn clamp_into(ob: &mut DynamicObstacle, bounds: &Rect) {
    let r = ob.radius;
    ob.position.x = ob.position.x.clamp(bounds.min.x + r, (bounds.max.x - r).max(bounds.min.x + r));
    ob.position.y = ob.position.y.clamp(bounds.min.y + r, (bounds.max.y - r).max(bounds.min.y + r));
}

fn advance_obstacle<R: Rng + ?Sized>(
    ob: &mut DynamicObstacle,
    dt: f64,
    bounds: &Rect,
    statics: &[StaticObstacle],
    rng: &mut R,
) {
    clamp_into(ob, bounds);
    let mut travel = ob.speed * dt;
    // Each pass either finishes the step or stops at an event, so this bound is generous.
    for _ in 0..10_000 {
        if ob.remaining_distance <= 0.0 {
            ob.heading = draw_heading(rng);
            ob.remaining_distance = draw_leg(rng);
        }
        let normals = contact_normals(ob, bounds, statics);
        if !normals.is_empty() && !moves_away(ob.heading, &normals) {
            let mut tries = 0;
            loop {
                ob.heading = draw_heading(rng);
                tries += 1;
                if moves_away(ob.heading, &normals) {
                    break;
                }
                if tries >= HEADING_RETRIES {
                    let (sx, sy) = normals.iter().fold((0.0, 0.0), |a, n| (a.0 + n.0, a.1 + n.1));
                    ob.heading = sy.atan2(sx).rem_euclid(TAU);
                    break;
                }
            }
        }
        if travel <= 1e-12 {
            break;
        }
        let to_contact = distance_to_contact(ob, bounds, statics);
        let leg = travel.min(ob.remaining_distance).min(to_contact);
        ob.position = Point2::new(ob.position.x + leg * ob.heading.cos(), ob.position.y + leg * ob.heading.sin());
        travel -= leg;
        ob.odometer += leg;
        ob.remaining_distance = (ob.remaining_distance - leg).max(0.0);
        if leg >= to_contact {
            clamp_into(ob, bounds);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn square(side: f64) -> Rect {
        Rect::new(p(0.0, 0.0), p(side, side))
    }

    fn env_with(dynamics: Vec<DynamicObstacle>, statics: Vec<StaticObstacle>, seed: u64) -> DynamicEnvironment {
        DynamicEnvironment::new(square(32.0), statics, dynamics, ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn straight_advance() {
        let ob = DynamicObstacle {
            position: p(5.0, 5.0),
            radius: 1.0,
            speed: 2.0,
            heading: 0.0,
            remaining_distance: 10.0,
            odometer: 0.0,
        };
        let mut env = env_with(vec![ob], vec![], 1);
        env.step(0.5);
        let o = &env.dynamics[0];
        assert!((o.position.x - 6.0).abs() < 1e-12 && (o.position.y - 5.0).abs() < 1e-12);
        assert!((o.remaining_distance - 9.0).abs() < 1e-12);
    }

    #[test]
    fn exhausted_leg_draws_before_moving() {
        let ob = DynamicObstacle::new(p(16.0, 16.0), 1.0, 2.0);
        let mut env = env_with(vec![ob], vec![], 7);
        env.step(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let heading = rng.gen_range(0.0..TAU);
        let leg = MAX_LEG_DISTANCE * (1.0 - rng.gen::<f64>());
        let o = &env.dynamics[0];
        assert_eq!(o.heading, heading);
        assert!((o.remaining_distance - (leg - 1.0)).abs() < 1e-12);
        assert!((o.position.x - (16.0 + heading.cos())).abs() < 1e-12);
        assert!((o.position.y - (16.0 + heading.sin())).abs() < 1e-12);
    }

    #[test]
    fn boundary_contact_matches_hand_trace() {
        let ob = DynamicObstacle {
            position: p(31.5, 5.0),
            radius: 1.0,
            speed: 2.0,
            heading: 0.0,
            remaining_distance: 10.0,
            odometer: 0.0,
        };
        let mut env = env_with(vec![ob], vec![], 42);
        env.step(0.5);

        // Hand trace: clamp to x = 31 (touching the right wall), redraw headings until
        // one points strictly inward, then travel the full 1 m along it.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut heading = rng.gen_range(0.0..TAU);
        while heading.cos() >= 0.0 {
            heading = rng.gen_range(0.0..TAU);
        }
        let o = &env.dynamics[0];
        assert_eq!(o.heading, heading);
        assert!((o.position.x - (31.0 + heading.cos())).abs() < 1e-12);
        assert!((o.position.y - (5.0 + heading.sin())).abs() < 1e-12);
        assert!((o.remaining_distance - 9.0).abs() < 1e-12);
    }

    #[test]
    fn redraws_on_static_contact() {
        let wall = StaticObstacle::Rect(Rect::new(p(10.0, 0.0), p(11.0, 32.0)));
        let ob = DynamicObstacle {
            position: p(8.0, 16.0),
            radius: 1.0,
            speed: 2.0,
            heading: 0.0,
            remaining_distance: 10.0,
            odometer: 0.0,
        };
        let mut env = env_with(vec![ob], vec![wall], 3);
        for _ in 0..200 {
            env.step(0.05);
            let o = &env.dynamics[0];
            assert!(o.position.x + o.radius <= 10.0 + 1e-9, "entered the wall at {:?}", o.position);
        }
    }

    #[test]
    fn zones_include_body() {
        let obs = vec![
            DynamicObstacle::new(p(5.0, 5.0), 1.0, 3.0),
            DynamicObstacle::new(p(10.0, 5.0), 1.0, 0.0),
            DynamicObstacle::new(p(15.0, 5.0), 0.5, 1.0),
        ];
        let env = env_with(obs, vec![], 0);
        let zones = env.collision_zones(0.05);
        assert_eq!(zones.len(), 3);
        assert!((zones[0].radius - 1.3).abs() < 1e-12);
        assert_eq!(zones[1].radius, 1.0);
        assert_eq!(zones[2].center, p(15.0, 5.0));
    }

    #[test]
    fn collision_queries() {
        let env = env_with(
            vec![DynamicObstacle::new(p(5.0, 5.0), 1.0, 1.0)],
            vec![StaticObstacle::Rect(Rect::new(p(20.0, 20.0), p(22.0, 22.0)))],
            0,
        );
        assert!(env.robot_in_collision(p(5.0, 5.0)));
        assert!(!env.robot_in_collision(p(6.01, 5.0)));
        assert!(env.robot_in_collision(p(21.0, 21.0)));

        let free = env_with(vec![], vec![], 0);
        assert!(free.segment_free_static(&Segment2::new(p(1.0, 1.0), p(30.0, 30.0))));
        assert!(!env.segment_free_static(&Segment2::new(p(19.0, 21.0), p(23.0, 21.0))));
        assert!(!free.segment_free_static(&Segment2::new(p(1.0, 1.0), p(33.0, 1.0))));
    }

    #[test]
    fn sample_free_avoids_statics_and_fails_when_blocked() {
        let env = env_with(vec![], vec![StaticObstacle::Rect(Rect::new(p(0.0, 0.0), p(16.0, 32.0)))], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let q = env.sample_free(&mut rng).unwrap();
            assert!(q.x > 16.0);
        }
        let blocked = env_with(vec![], vec![StaticObstacle::Rect(square(32.0))], 0);
        assert_eq!(blocked.sample_free(&mut rng), Err(EnvError::NoFreeSpace(SAMPLE_REJECTION_LIMIT)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bodies_stay_inside_and_distance_is_conserved(
            seed in any::<u64>(),
            starts in prop::collection::vec((1.0..31.0f64, 1.0..31.0f64, 0.0..4.0f64), 1..6),
            dts in prop::collection::vec(0.01..0.5f64, 1..80),
        ) {
            let obs: Vec<_> = starts.iter().map(|&(x, y, v)| DynamicObstacle::new(p(x, y), 1.0, v)).collect();
            let mut env = env_with(obs, vec![], seed);
            for &dt in &dts {
                let prev: Vec<(Point2, f64)> = env.dynamics.iter().map(|o| (o.position, o.remaining_distance)).collect();
                env.step(dt);
                for (i, o) in env.dynamics.iter().enumerate() {
                    prop_assert!(env.bounds.contains_circle(&o.body()), "{:?}", o);
                    prop_assert!(o.remaining_distance >= 0.0);
                    // Straight-line displacement never exceeds the distance budget.
                    prop_assert!(dist(prev[i].0, o.position) <= o.speed * dt + 1e-9);
                }
            }
            let total: f64 = dts.iter().sum();
            for o in &env.dynamics {
                prop_assert!((o.odometer - o.speed * total).abs() < 1e-9, "{} vs {}", o.odometer, o.speed * total);
            }
        }

        #[test]
        fn same_seed_is_bit_identical(seed in any::<u64>(), dts in prop::collection::vec(0.01..0.3f64, 1..60)) {
            let make = || env_with(
                (0..4).map(|i| DynamicObstacle::new(p(4.0 + 6.0 * i as f64, 16.0), 1.0, 1.0 + i as f64)).collect(),
                vec![],
                seed,
            );
            let (mut a, mut b) = (make(), make());
            for &dt in &dts {
                a.step(dt);
                b.step(dt);
            }
            prop_assert_eq!(a.dynamics, b.dynamics);
        }
    }
}
