use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{heading_of, normalize_heading, segment_intersection, wrap_180, Aabb, Vec2};
use crate::sensor::SensorModel;

/// Robot translation per tick, world units.
pub const SPEED_PER_TICK: f64 = 0.5;
/// Maximum heading change per tick, degrees.
pub const TURN_RATE_DEG: f64 = 30.0;
/// Ticks without progress before a navigation goal is abandoned.
pub const STALL_LIMIT: u32 = 20;
/// Default goal tolerance of the navigation action.
pub const NAV_TOLERANCE: f64 = 0.25;

const CONTACT_EPS: f64 = 1e-6;
const ALIGN_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("world file: {0}")]
    Parse(String),
    #[error("duplicate object id {0:?}")]
    DuplicateId(String),
    #[error("object {object:?} rests on unknown object {support:?}")]
    UnknownSupport { object: String, support: String },
    #[error("objects {0:?} and {1:?} occupy the same volume")]
    Overlap(String, String),
    #[error("goal ({x}, {y}) is outside the world bounds")]
    OutOfBounds { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Degrees, normalized into [0, 360).
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    /// Open-set class text, e.g. `chair`, `red_cube`, `branch`.
    pub label: String,
    pub pose: Pose2D,
    pub hx: f64,
    pub hy: f64,
    pub height: f64,
    pub z: f64,
    /// `None` means the object stands on the ground.
    pub supported_by: Option<String>,
    /// Set once an obstacle has been judged safe to drive over.
    #[serde(default)]
    pub traversable: bool,
}

impl WorldObject {
    pub fn footprint(&self) -> Aabb {
        Aabb::from_center(self.pose.position(), self.hx, self.hy)
    }

    pub fn top(&self) -> f64 {
        self.z + self.height
    }

    /// Strict overlap of occupied volumes.
    pub fn collides_with(&self, other: &WorldObject) -> bool {
        self.footprint().overlaps_strict(&other.footprint())
            && self.z < other.top()
            && other.z < self.top()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Wall {
    pub fn a(&self) -> Vec2 {
        Vec2::new(self.x1, self.y1)
    }
    pub fn b(&self) -> Vec2 {
        Vec2::new(self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub pose: Pose2D,
    /// Vehicle width; sizes the tractor's lookahead corridor.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavGoal {
    pub x: f64,
    pub y: f64,
    pub tolerance: f64,
}

impl NavGoal {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            tolerance: NAV_TOLERANCE,
        }
    }

    pub fn point(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavStatus {
    Active,
    Reached,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub goal: NavGoal,
    pub status: NavStatus,
    pub distance_remaining: f64,
    pub stalled_ticks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    SafetyViolation,
    AbortedByAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorldEvent {
    SafetyViolation { tick: u64, obstacle: String },
    Signal { tick: u64, signal: String },
    AbortedByAgent { tick: u64 },
}

/// JSON world description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub robot: RobotSpec,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub hx: f64,
    pub hy: f64,
    pub height: f64,
    /// Id of the object this one rests on.
    #[serde(default)]
    pub on: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_width() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub id: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: String,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub tick: u64,
    pub bounds: Aabb,
    pub walls: Vec<Wall>,
    pub objects: Vec<WorldObject>,
    pub robot: Robot,
    pub regions: BTreeMap<String, Aabb>,
    pub routes: BTreeMap<String, Vec<Vec2>>,
    pub nav: Option<NavState>,
    pub held: Option<WorldObject>,
    pub events: Vec<WorldEvent>,
    pub status: RunStatus,
    pub sensor: SensorModel,
}

impl WorldFile {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))
    }
}

impl World {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        Self::from_file(WorldFile::from_json(text)?)
    }

    pub fn from_file(file: WorldFile) -> Result<Self, WorldError> {
        let mut objects: Vec<WorldObject> = Vec::with_capacity(file.objects.len());
        let mut ids = BTreeSet::new();
        for spec in file.objects {
            if !ids.insert(spec.id.clone()) {
                return Err(WorldError::DuplicateId(spec.id));
            }
            let z = match &spec.on {
                None => 0.0,
                Some(support) => objects
                    .iter()
                    .find(|o| &o.id == support)
                    .map(|o| o.top())
                    .ok_or_else(|| WorldError::UnknownSupport {
                        object: spec.id.clone(),
                        support: support.clone(),
                    })?,
            };
            objects.push(WorldObject {
                id: spec.id,
                label: spec.label,
                pose: Pose2D::new(spec.x, spec.y, 0.0),
                hx: spec.hx,
                hy: spec.hy,
                height: spec.height,
                z,
                supported_by: spec.on,
                traversable: false,
            });
        }
        let b = file.bounds;
        let world = World {
            tick: 0,
            bounds: Aabb::new(Vec2::new(b.xmin, b.ymin), Vec2::new(b.xmax, b.ymax)),
            walls: file.walls,
            objects,
            robot: Robot {
                pose: Pose2D::new(file.robot.x, file.robot.y, file.robot.heading),
                width: file.robot.width,
            },
            regions: file
                .regions
                .into_iter()
                .map(|r| {
                    (
                        r.id,
                        Aabb::new(Vec2::new(r.xmin, r.ymin), Vec2::new(r.xmax, r.ymax)),
                    )
                })
                .collect(),
            routes: file
                .routes
                .into_iter()
                .map(|r| {
                    (
                        r.id,
                        r.waypoints.iter().map(|w| Vec2::new(w[0], w[1])).collect(),
                    )
                })
                .collect(),
            nav: None,
            held: None,
            events: Vec::new(),
            status: RunStatus::Running,
            sensor: SensorModel::default(),
        };
        if let Some((a, b)) = world.first_collision() {
            return Err(WorldError::Overlap(a, b));
        }
        Ok(world)
    }

    pub fn object(&self, id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut WorldObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// First pair of objects whose occupied volumes intersect, if any.
    pub fn first_collision(&self) -> Option<(String, String)> {
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.collides_with(b) {
                    return Some((a.id.clone(), b.id.clone()));
                }
            }
        }
        None
    }

    /// Checks the elevation equation and acyclicity of support relations.
    pub fn support_consistent(&self) -> bool {
        for o in &self.objects {
            let mut seen = BTreeSet::new();
            let mut cur = o;
            while let Some(s) = &cur.supported_by {
                if !seen.insert(cur.id.clone()) {
                    return false;
                }
                let Some(support) = self.object(s) else {
                    return false;
                };
                if (cur.z - support.top()).abs() > 1e-9
                    || !cur.footprint().overlaps_strict(&support.footprint())
                {
                    return false;
                }
                cur = support;
            }
            if cur.supported_by.is_none() && cur.z.abs() > 1e-9 {
                return false;
            }
        }
        true
    }

    pub fn halted(&self) -> bool {
        self.status != RunStatus::Running
    }

    pub fn set_nav_goal(&mut self, goal: NavGoal) -> Result<(), WorldError> {
        if !self.bounds.contains(goal.point()) {
            return Err(WorldError::OutOfBounds {
                x: goal.x,
                y: goal.y,
            });
        }
        let remaining = self.robot.pose.position().distance(goal.point());
        self.nav = Some(NavState {
            goal,
            status: if remaining <= goal.tolerance {
                NavStatus::Reached
            } else {
                NavStatus::Active
            },
            distance_remaining: remaining,
            stalled_ticks: 0,
        });
        Ok(())
    }

    pub fn clear_nav(&mut self) {
        self.nav = None;
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) {
        self.tick += 1;
        if self.halted() {
            return;
        }
        let Some(nav) = self.nav.clone() else {
            return;
        };
        if nav.status != NavStatus::Active {
            return;
        }
        let pos = self.robot.pose.position();
        let to_goal = nav.goal.point().sub(pos);
        let dist = to_goal.norm();
        let err = wrap_180(heading_of(to_goal) - self.robot.pose.heading);
        if dist > 0.0 && err.abs() > ALIGN_EPS {
            let turn = err.clamp(-TURN_RATE_DEG, TURN_RATE_DEG);
            self.robot.pose.heading = normalize_heading(self.robot.pose.heading + turn);
        } else if dist > 0.0 {
            let advance = SPEED_PER_TICK.min(dist);
            let target = if advance == dist {
                nav.goal.point()
            } else {
                pos.add(to_goal.scale(advance / dist))
            };
            self.robot.pose.x_y_set(self.swept_motion(pos, target));
        }
        let remaining = self.robot.pose.position().distance(nav.goal.point());
        let state = self.nav.as_mut().expect("nav goal present");
        if remaining <= state.goal.tolerance {
            state.status = NavStatus::Reached;
            state.stalled_ticks = 0;
        } else if remaining >= state.distance_remaining {
            state.stalled_ticks += 1;
            if state.stalled_ticks >= STALL_LIMIT {
                state.status = NavStatus::Aborted;
            }
        } else {
            state.stalled_ticks = 0;
        }
        state.distance_remaining = remaining.min(state.distance_remaining);
    }

    /// End point of a straight move from `from` toward `to`, stopping just
    /// short of the first wall, bound or solid ground object in the way.
    pub fn swept_motion(&self, from: Vec2, to: Vec2) -> Vec2 {
        let len = from.distance(to);
        if len == 0.0 {
            return from;
        }
        let mut hit = f64::INFINITY;
        for w in self
            .walls
            .iter()
            .map(|w| (w.a(), w.b()))
            .chain(bound_edges(&self.bounds))
        {
            if let Some(t) = segment_intersection(from, to, w.0, w.1) {
                hit = hit.min(t);
            }
        }
        for o in self.solid_ground_objects() {
            let fp = o.footprint();
            if fp.contains_strict(from) {
                continue;
            }
            if let Some((t0, _)) = fp.clip_segment(from, to) {
                hit = hit.min(t0);
            }
        }
        if hit.is_finite() {
            let t = (hit - CONTACT_EPS / len).max(0.0);
            from.add(to.sub(from).scale(t))
        } else {
            to
        }
    }

    /// Objects that block driving: standing on the ground and not flagged traversable.
    pub fn solid_ground_objects(&self) -> impl Iterator<Item = &WorldObject> {
        self.objects
            .iter()
            .filter(|o| o.supported_by.is_none() && !o.traversable)
    }

    /// SHA-256 over the canonical JSON encoding of the full state.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Compact view for consoles and demos.
    pub fn snapshot(&self) -> Value {
        json!({
            "tick": self.tick,
            "bounds": self.bounds,
            "walls": self.walls,
            "robot": {
                "x": self.robot.pose.x,
                "y": self.robot.pose.y,
                "heading": self.robot.pose.heading,
                "width": self.robot.width,
            },
            "objects": self.objects.iter().map(|o| json!({
                "id": o.id,
                "label": o.label,
                "x": o.pose.x,
                "y": o.pose.y,
                "hx": o.hx,
                "hy": o.hy,
                "z": o.z,
                "height": o.height,
                "supported_by": o.supported_by,
            })).collect::<Vec<_>>(),
            "held": self.held.as_ref().map(|o| o.id.clone()),
            "nav": self.nav,
            "status": self.status,
        })
    }
}

impl Pose2D {
    fn x_y_set(&mut self, p: Vec2) {
        self.x = p.x;
        self.y = p.y;
    }
}

fn bound_edges(b: &Aabb) -> [(Vec2, Vec2); 4] {
    let c = b.corners();
    [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(robot: (f64, f64, f64)) -> World {
        World::from_json(&format!(
            r#"{{"bounds":{{"xmin":-20,"ymin":-20,"xmax":20,"ymax":20}},
                "robot":{{"x":{},"y":{},"heading":{}}}}}"#,
            robot.0, robot.1, robot.2
        ))
        .unwrap()
    }

    /// Independent re-simulation of the turn-then-advance rule.
    fn oracle_ticks(start: (f64, f64, f64), goal: (f64, f64)) -> (u64, (f64, f64)) {
        let (mut x, mut y, mut h) = start;
        let mut ticks = 0;
        loop {
            let (dx, dy) = (goal.0 - x, goal.1 - y);
            let d = (dx * dx + dy * dy).sqrt();
            if d <= 0.25 {
                return (ticks, (x, y));
            }
            ticks += 1;
            let want = dy.atan2(dx).to_degrees();
            let mut err = (want - h) % 360.0;
            if err > 180.0 {
                err -= 360.0;
            }
            if err <= -180.0 {
                err += 360.0;
            }
            if err.abs() > 1e-9 {
                h += err.clamp(-30.0, 30.0);
            } else {
                let a = d.min(0.5);
                x += dx / d * a;
                y += dy / d * a;
            }
        }
    }

    fn run_to_goal(world: &mut World, goal: NavGoal, max: u64) -> u64 {
        world.set_nav_goal(goal).unwrap();
        let mut n = 0;
        while world.nav.as_ref().unwrap().status == NavStatus::Active && n < max {
            world.step();
            n += 1;
        }
        n
    }

    #[test]
    fn straight_line_takes_ten_ticks() {
        let mut w = open_world((0.0, 0.0, 0.0));
        w.set_nav_goal(NavGoal {
            x: 5.0,
            y: 0.0,
            tolerance: 1e-9,
        })
        .unwrap();
        for _ in 0..10 {
            w.step();
        }
        assert_eq!(w.robot.pose.position(), Vec2::new(5.0, 0.0));
        assert_eq!(w.nav.as_ref().unwrap().status, NavStatus::Reached);
    }

    #[test]
    fn diagonal_goal_matches_kinematic_oracle() {
        let (expect_ticks, _) = oracle_ticks((0.0, 0.0, 0.0), (3.0, 4.0));
        // 53.13° of turning is two ticks, then ten half-unit advances
        assert_eq!(expect_ticks, 12);
        let mut w = open_world((0.0, 0.0, 0.0));
        assert_eq!(
            run_to_goal(&mut w, NavGoal::new(3.0, 4.0), 100),
            expect_ticks
        );
    }

    #[test]
    fn oracle_agreement_over_grid_of_goals() {
        for gx in [-7.0, -2.5, 0.0, 3.0, 6.5] {
            for gy in [-4.0, 0.0, 1.5, 8.0] {
                for h in [0.0, 90.0, 200.0] {
                    let (ticks, end) = oracle_ticks((0.0, 0.0, h), (gx, gy));
                    let mut w = open_world((0.0, 0.0, h));
                    let n = run_to_goal(&mut w, NavGoal::new(gx, gy), 500);
                    assert_eq!(n, ticks, "goal ({gx},{gy}) heading {h}");
                    assert!((w.robot.pose.x - end.0).abs() < 1e-9);
                    assert!((w.robot.pose.y - end.1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn wall_stops_robot_at_contact() {
        let mut w = World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":10,"ymax":10},
                "walls":[{"x1":3,"y1":-1,"x2":3,"y2":11}],
                "robot":{"x":1,"y":5,"heading":0}}"#,
        )
        .unwrap();
        w.set_nav_goal(NavGoal::new(6.0, 5.0)).unwrap();
        let mut max_x: f64 = 0.0;
        for _ in 0..40 {
            w.step();
            max_x = max_x.max(w.robot.pose.x);
        }
        assert!(max_x < 3.0, "penetrated wall: {max_x}");
        assert!(3.0 - max_x < 1e-5);
        let nav = w.nav.as_ref().unwrap();
        assert_eq!(nav.status, NavStatus::Aborted);
    }

    #[test]
    fn walled_off_goal_aborts_after_stall_limit() {
        let mut w = World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":10,"ymax":10},
                "walls":[{"x1":7,"y1":4,"x2":9,"y2":4},{"x1":9,"y1":4,"x2":9,"y2":6},
                         {"x1":9,"y1":6,"x2":7,"y2":6},{"x1":7,"y1":6,"x2":7,"y2":4}],
                "robot":{"x":5,"y":5,"heading":0}}"#,
        )
        .unwrap();
        w.set_nav_goal(NavGoal::new(8.0, 5.0)).unwrap();
        // 4 ticks to reach the wall, then the stall counter runs
        let mut ticks = 0;
        while w.nav.as_ref().unwrap().status == NavStatus::Active {
            w.step();
            ticks += 1;
            assert!(ticks < 100);
        }
        assert_eq!(w.nav.as_ref().unwrap().status, NavStatus::Aborted);
        assert_eq!(ticks, 4 + STALL_LIMIT as u64);
    }

    #[test]
    fn goal_outside_bounds_rejected() {
        let mut w = open_world((0.0, 0.0, 0.0));
        assert!(matches!(
            w.set_nav_goal(NavGoal::new(1e6, 0.0)),
            Err(WorldError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn object_footprint_blocks_motion() {
        let mut w = World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":10,"ymax":10},
                "objects":[{"id":"box","label":"crate","x":5,"y":5,"hx":0.5,"hy":0.5,"height":1}],
                "robot":{"x":1,"y":5,"heading":0}}"#,
        )
        .unwrap();
        w.set_nav_goal(NavGoal::new(8.0, 5.0)).unwrap();
        for _ in 0..30 {
            w.step();
            assert!(!w
                .object("box")
                .unwrap()
                .footprint()
                .contains_strict(w.robot.pose.position()));
        }
        assert!((w.robot.pose.x - 4.5).abs() < 1e-5);
    }

    #[test]
    fn overlapping_file_rejected_and_stacks_get_elevation() {
        let err = World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":10,"ymax":10},
                "objects":[{"id":"a","label":"cube","x":1,"y":1,"hx":0.5,"hy":0.5,"height":1},
                           {"id":"b","label":"cube","x":1.5,"y":1,"hx":0.5,"hy":0.5,"height":1}],
                "robot":{"x":5,"y":5}}"#,
        )
        .unwrap_err();
        assert_eq!(err, WorldError::Overlap("a".into(), "b".into()));
        let w = World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":10,"ymax":10},
                "objects":[{"id":"a","label":"cube","x":1,"y":1,"hx":0.5,"hy":0.5,"height":1},
                           {"id":"b","label":"cube","x":1,"y":1,"hx":0.5,"hy":0.5,"height":0.5,"on":"a"}],
                "robot":{"x":5,"y":5}}"#,
        )
        .unwrap();
        assert_eq!(w.object("b").unwrap().z, 1.0);
        assert!(w.support_consistent());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = open_world((0.0, 0.0, 0.0));
        let mut b = a.clone();
        assert_eq!(a.state_hash(), b.state_hash());
        b.step();
        assert_ne!(a.state_hash(), b.state_hash());
    }
}
