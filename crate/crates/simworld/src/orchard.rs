//! Orchard scenario: obstacle kinds, rule-based tractor autonomy, detours and
//! the handlers for resolutions chosen by an anomaly agent.

use std::collections::BTreeSet;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::geometry::{unit_from_heading, Aabb, Corridor, Vec2};
use crate::sensor::CameraObservation;
use crate::world::{NavGoal, NavStatus, Pose2D, RunStatus, World, WorldEvent, WorldObject};

/// Length of the lookahead corridor in front of the tractor.
pub const LOOKAHEAD: f64 = 3.0;
/// Clearance added around an obstacle footprint when planning a detour.
pub const DETOUR_INFLATION: f64 = 0.5;
/// Ticks to wait after a signal before re-checking the corridor.
pub const SIGNAL_WAIT_TICKS: u64 = 10;
/// Waypoints are followed exactly; motion never overshoots.
const WAYPOINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Branch,
    Rock,
    Crate,
    Person,
}

impl ObstacleKind {
    pub fn name(self) -> &'static str {
        match self {
            ObstacleKind::Branch => "branch",
            ObstacleKind::Rock => "rock",
            ObstacleKind::Crate => "crate",
            ObstacleKind::Person => "person",
        }
    }

    /// (hx, hy, height)
    pub fn dimensions(self) -> (f64, f64, f64) {
        match self {
            ObstacleKind::Branch => (0.6, 0.15, 0.1),
            ObstacleKind::Rock => (0.4, 0.4, 0.5),
            ObstacleKind::Crate => (0.5, 0.5, 0.8),
            ObstacleKind::Person => (0.3, 0.3, 1.8),
        }
    }

    /// Ground truth: can the tractor drive over it safely?
    pub fn traversable(self) -> bool {
        matches!(self, ObstacleKind::Branch)
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "branch" => Some(ObstacleKind::Branch),
            "rock" => Some(ObstacleKind::Rock),
            "crate" => Some(ObstacleKind::Crate),
            "person" => Some(ObstacleKind::Person),
            _ => None,
        }
    }
}

impl World {
    /// Places an obstacle on segment `segment` of `route` at `fraction` of its length.
    pub fn spawn_obstacle(
        &mut self,
        kind: ObstacleKind,
        route: &[Vec2],
        segment: usize,
        fraction: f64,
    ) -> String {
        let (a, b) = (route[segment], route[segment + 1]);
        let at = a.add(b.sub(a).scale(fraction));
        let n = self
            .objects
            .iter()
            .filter(|o| o.label == kind.name())
            .count();
        let id = format!("{}_{}", kind.name(), n + 1);
        let (hx, hy, height) = kind.dimensions();
        self.objects.push(WorldObject {
            id: id.clone(),
            label: kind.name().to_string(),
            pose: Pose2D::new(at.x, at.y, 0.0),
            hx,
            hy,
            height,
            z: 0.0,
            supported_by: None,
            traversable: false,
        });
        id
    }
}

/// Shortest corner path from `from` to `to` around `obstacle` inflated by
/// `inflation`, as intermediate waypoints (empty when the straight line is
/// already clear). `None` if either endpoint lies inside the inflated box.
pub fn plan_detour(from: Vec2, to: Vec2, obstacle: &Aabb, inflation: f64) -> Option<Vec<Vec2>> {
    let zone = obstacle.inflate(inflation);
    if zone.contains_strict(from) || zone.contains_strict(to) {
        return None;
    }
    let mut nodes = vec![from, to];
    nodes.extend(zone.corners());
    let n = nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[0] = 0.0;
    for _ in 0..n {
        let Some(u) = (0..n)
            .filter(|&i| !done[i] && dist[i].is_finite())
            .min_by(|&i, &j| dist[i].total_cmp(&dist[j]).then(i.cmp(&j)))
        else {
            break;
        };
        done[u] = true;
        for v in 0..n {
            if done[v] || zone.segment_crosses_interior(nodes[u], nodes[v]) {
                continue;
            }
            let d = dist[u] + nodes[u].distance(nodes[v]);
            if d < dist[v] {
                dist[v] = d;
                prev[v] = u;
            }
        }
    }
    if !dist[1].is_finite() {
        return None;
    }
    let mut path = Vec::new();
    let mut cur = prev[1];
    while cur != 0 {
        path.push(nodes[cur]);
        cur = prev[cur];
    }
    path.reverse();
    Some(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    ReplanRoute,
    DriveForward,
    FlashSignal,
    SoundSignal,
    AbortTask,
}

impl Resolution {
    pub const ALL: [Resolution; 5] = [
        Resolution::ReplanRoute,
        Resolution::DriveForward,
        Resolution::FlashSignal,
        Resolution::SoundSignal,
        Resolution::AbortTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resolution::ReplanRoute => "replan_route",
            Resolution::DriveForward => "drive_forward",
            Resolution::FlashSignal => "flash_signal",
            Resolution::SoundSignal => "sound_signal",
            Resolution::AbortTask => "abort_task",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Resolution::ALL.into_iter().find(|r| r.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TractorState {
    Driving,
    Halted {
        anomaly_id: u64,
        obstacle: String,
        recheck_at: Option<u64>,
    },
    Completed,
    Aborted,
    SafetyViolation,
}

/// Raised when an obstacle enters the lookahead corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyNotice {
    pub anomaly_id: u64,
    pub tick: u64,
    pub obstacle: String,
    pub label: String,
    pub distance: f64,
    pub observation: CameraObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionEffect {
    pub resolution: Resolution,
    pub resumed: bool,
    pub detour: Vec<Vec2>,
    pub note: String,
}

/// Rule-based route follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tractor {
    pub route: Vec<Vec2>,
    pub next: usize,
    pub state: TractorState,
    pub acknowledged: BTreeSet<String>,
    pub reached: Vec<usize>,
    anomalies: u64,
    /// Original route indices for each entry of `route` (None for detour points).
    origin: Vec<Option<usize>>,
}

impl Tractor {
    pub fn new(route: Vec<Vec2>) -> Self {
        let origin = (0..route.len()).map(Some).collect();
        Self {
            route,
            next: 0,
            state: TractorState::Driving,
            acknowledged: BTreeSet::new(),
            reached: Vec::new(),
            anomalies: 0,
            origin,
        }
    }

    pub fn corridor(world: &World) -> Corridor {
        Corridor {
            origin: world.robot.pose.position(),
            dir: unit_from_heading(world.robot.pose.heading),
            length: LOOKAHEAD,
            half_width: world.robot.width / 2.0,
        }
    }

    /// First unacknowledged solid object inside the lookahead corridor.
    pub fn blocking_obstacle<'w>(&self, world: &'w World) -> Option<&'w WorldObject> {
        let c = Self::corridor(world);
        let pos = world.robot.pose.position();
        world
            .solid_ground_objects()
            .filter(|o| !self.acknowledged.contains(&o.id))
            .filter(|o| c.intersects(&o.footprint()))
            .min_by(|a, b| {
                a.footprint()
                    .distance_to(pos)
                    .total_cmp(&b.footprint().distance_to(pos))
                    .then_with(|| a.id.cmp(&b.id))
            })
    }

    pub fn is_finished(&self) -> bool {
        matches!(
            self.state,
            TractorState::Completed | TractorState::Aborted | TractorState::SafetyViolation
        )
    }

    /// Every waypoint of the original route has been reached.
    pub fn route_complete(&self) -> bool {
        self.state == TractorState::Completed
    }

    /// Runs the autonomy rules for the current tick, before the world steps.
    pub fn update(&mut self, world: &mut World) -> Option<AnomalyNotice> {
        match &self.state {
            TractorState::Completed | TractorState::Aborted | TractorState::SafetyViolation => {
                return None
            }
            TractorState::Halted { recheck_at, .. } => match recheck_at {
                Some(t) if world.tick >= *t => {
                    if self.blocking_obstacle(world).is_none() {
                        self.state = TractorState::Driving;
                    } else {
                        return self.raise(world);
                    }
                }
                _ => return None,
            },
            TractorState::Driving => {}
        }
        let pos = world.robot.pose.position();
        while self.next < self.route.len()
            && pos.distance(self.route[self.next]) <= WAYPOINT_TOLERANCE
        {
            if let Some(i) = self.origin[self.next] {
                self.reached.push(i);
            }
            self.next += 1;
        }
        if self.next >= self.route.len() {
            self.state = TractorState::Completed;
            world.clear_nav();
            return None;
        }
        if self.blocking_obstacle(world).is_some() {
            return self.raise(world);
        }
        let wp = self.route[self.next];
        let needs_goal = match &world.nav {
            Some(n) => n.goal.point() != wp || n.status != NavStatus::Active,
            None => true,
        };
        if needs_goal {
            let _ = world.set_nav_goal(NavGoal {
                x: wp.x,
                y: wp.y,
                tolerance: WAYPOINT_TOLERANCE,
            });
        }
        None
    }

    fn raise(&mut self, world: &mut World) -> Option<AnomalyNotice> {
        let obstacle = self.blocking_obstacle(world)?.clone();
        world.clear_nav();
        self.anomalies += 1;
        self.state = TractorState::Halted {
            anomaly_id: self.anomalies,
            obstacle: obstacle.id.clone(),
            recheck_at: None,
        };
        Some(AnomalyNotice {
            anomaly_id: self.anomalies,
            tick: world.tick,
            obstacle: obstacle.id.clone(),
            label: obstacle.label.clone(),
            distance: obstacle
                .footprint()
                .distance_to(world.robot.pose.position()),
            observation: world.observe(),
        })
    }

    /// Applies a resolution to the current anomaly.
    pub fn resolve(&mut self, world: &mut World, resolution: Resolution) -> ResolutionEffect {
        let TractorState::Halted {
            anomaly_id,
            obstacle,
            ..
        } = self.state.clone()
        else {
            return ResolutionEffect {
                resolution,
                resumed: false,
                detour: Vec::new(),
                note: "no anomaly pending".into(),
            };
        };
        let obj = world.object(&obstacle).cloned();
        let effect = |resumed, detour, note: String| ResolutionEffect {
            resolution,
            resumed,
            detour,
            note,
        };
        match resolution {
            Resolution::DriveForward => {
                let traversable = obj
                    .as_ref()
                    .and_then(|o| ObstacleKind::from_label(&o.label))
                    .is_some_and(ObstacleKind::traversable);
                if traversable {
                    if let Some(o) = world.object_mut(&obstacle) {
                        o.traversable = true;
                    }
                    self.acknowledged.insert(obstacle.clone());
                    self.state = TractorState::Driving;
                    effect(true, Vec::new(), format!("driving over {obstacle}"))
                } else {
                    world.events.push(WorldEvent::SafetyViolation {
                        tick: world.tick,
                        obstacle: obstacle.clone(),
                    });
                    world.status = RunStatus::SafetyViolation;
                    world.clear_nav();
                    self.state = TractorState::SafetyViolation;
                    effect(false, Vec::new(), format!("drove into {obstacle}"))
                }
            }
            Resolution::ReplanRoute => {
                let Some(o) = obj else {
                    self.state = TractorState::Driving;
                    return effect(true, Vec::new(), "obstacle gone".into());
                };
                let from = world.robot.pose.position();
                let zone = o.footprint().inflate(DETOUR_INFLATION);
                // drop waypoints that sit inside the keep-out zone
                while self.next < self.route.len() && zone.contains_strict(self.route[self.next]) {
                    self.next += 1;
                }
                let detour = if self.next < self.route.len() {
                    plan_detour(
                        from,
                        self.route[self.next],
                        &o.footprint(),
                        DETOUR_INFLATION,
                    )
                    .unwrap_or_default()
                } else {
                    Vec::new()
                };
                for (k, p) in detour.iter().enumerate() {
                    self.route.insert(self.next + k, *p);
                    self.origin.insert(self.next + k, None);
                }
                self.acknowledged.insert(o.id.clone());
                self.state = TractorState::Driving;
                effect(true, detour, format!("detour around {}", o.id))
            }
            Resolution::FlashSignal | Resolution::SoundSignal => {
                world.events.push(WorldEvent::Signal {
                    tick: world.tick,
                    signal: resolution.name().into(),
                });
                self.state = TractorState::Halted {
                    anomaly_id,
                    obstacle,
                    recheck_at: Some(world.tick + SIGNAL_WAIT_TICKS),
                };
                effect(false, Vec::new(), "signalled; waiting".into())
            }
            Resolution::AbortTask => {
                world
                    .events
                    .push(WorldEvent::AbortedByAgent { tick: world.tick });
                world.status = RunStatus::AbortedByAgent;
                world.clear_nav();
                self.state = TractorState::Aborted;
                effect(false, Vec::new(), "task aborted".into())
            }
        }
    }
}
