//! Puts a `World` on the bus: the `detect`, `manip` and `localize` services,
//! the `nav/goto` action, periodic snapshots and, for the orchard, the
//! rule-based tractor autonomy. The host owns the tick; `tick()` is called by
//! the scenario runner's clock.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use futures::FutureExt;
use parking_lot::Mutex;
use rai_simworld::{
    CameraObservation, ManipCommand, NavGoal, NavStatus, Resolution, ResolutionEffect, Tractor,
    Vec2, World,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::agents::mission::NAV_ACTION;
use crate::agents::orchard::{ResolutionMessage, ANOMALY_EVENTS, ANOMALY_RESOLUTIONS};
use crate::msgbus::{
    ActionOutcome, ActionRegistration, Bus, BusError, FnActionServer, ServiceRegistration,
    Subscription, DEFAULT_QUEUE_CAPACITY,
};
use crate::toolkit::Tracer;

pub const TICK: Duration = Duration::from_millis(100);
pub const WORLD_SNAPSHOT: &str = "world/snapshot";
pub const WORLD_ANOMALIES: &str = "world/anomalies";
/// Ticks at which the state hash is recorded (when reached).
pub const HASH_TICKS: [u64; 2] = [10, 100];

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub snapshot_every: u64,
    /// Ticks a manipulation takes before it is applied.
    pub manip_ticks: u64,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            snapshot_every: 10,
            manip_ticks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipRecord {
    pub tick: u64,
    pub command: Value,
    pub ok: bool,
    pub code: Option<String>,
    pub message: String,
}

/// Resolution applied to the tractor, with the geometry needed to audit a detour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedResolution {
    pub tick: u64,
    pub anomaly_id: u64,
    pub effect: ResolutionEffect,
    pub from: Vec2,
    pub next_waypoint: Option<Vec2>,
    pub obstacle: Option<rai_simworld::Aabb>,
}

struct Shared {
    world: Mutex<World>,
    tractor: Option<Mutex<Tractor>>,
    manip_log: Mutex<Vec<ManipRecord>>,
    hashes: Mutex<BTreeMap<u64, String>>,
    tracer: Option<Tracer>,
    ticks: watch::Sender<u64>,
}

impl Shared {
    fn trace(&self, kind: &str, payload: &Value) {
        if let Some(t) = &self.tracer {
            t("world", kind, payload);
        }
    }
}

pub struct WorldHost {
    bus: Bus,
    shared: Arc<Shared>,
    cfg: HostConfig,
    resolutions: Option<Subscription>,
    _services: Vec<ServiceRegistration>,
    _nav: ActionRegistration,
}

fn parse_goal(v: &Value) -> Option<NavGoal> {
    Some(NavGoal::new(v.get("x")?.as_f64()?, v.get("y")?.as_f64()?))
}

impl WorldHost {
    pub fn start(
        bus: Bus,
        world: World,
        tractor: Option<Tractor>,
        cfg: HostConfig,
        tracer: Option<Tracer>,
    ) -> Result<Self, BusError> {
        let (ticks, _) = watch::channel(world.tick);
        let shared = Arc::new(Shared {
            world: Mutex::new(world),
            tractor: tractor.map(Mutex::new),
            manip_log: Mutex::new(Vec::new()),
            hashes: Mutex::new(BTreeMap::new()),
            tracer,
            ticks,
        });
        let mut services = Vec::new();

        let s = shared.clone();
        services.push(bus.register_service_fn("detect", move |req| {
            let queries: Vec<String> = req
                .get("queries")
                .cloned()
                .map(serde_json::from_value)
                .transpose()
                .map_err(|e| format!("bad queries: {e}"))?
                .unwrap_or_default();
            let w = s.world.lock();
            let obs = CameraObservation {
                tick: w.tick,
                detections: w.detect(&queries),
            };
            Ok(serde_json::to_value(obs).expect("observation serializes"))
        })?);

        let s = shared.clone();
        services.push(bus.register_service_fn("localize", move |_| {
            let w = s.world.lock();
            let p = w.robot.pose;
            Ok(json!({"x": p.x, "y": p.y, "heading": p.heading, "tick": w.tick}))
        })?);

        let s = shared.clone();
        let manip_ticks = cfg.manip_ticks;
        services.push(bus.register_service(
            "manip",
            Arc::new(move |req: Value| {
                let s = s.clone();
                async move {
                    let cmd: ManipCommand = serde_json::from_value(req.clone())
                        .map_err(|_| format!("bad manipulation request {req}"))?;
                    let mut rx = s.ticks.subscribe();
                    let until = *rx.borrow_and_update() + manip_ticks;
                    while *rx.borrow_and_update() < until {
                        if rx.changed().await.is_err() {
                            return Err("world stopped".to_string());
                        }
                    }
                    let mut w = s.world.lock();
                    let res = w.manipulate(&cmd);
                    let rec = ManipRecord {
                        tick: w.tick,
                        command: req,
                        ok: res.is_ok(),
                        code: res.as_ref().err().map(|e| e.code().to_string()),
                        message: match &res {
                            Ok(_) => "ok".into(),
                            Err(e) => e.to_string(),
                        },
                    };
                    drop(w);
                    s.trace("manip", &serde_json::to_value(&rec).expect("record"));
                    s.manip_log.lock().push(rec);
                    res.map(|ok| serde_json::to_value(ok).expect("manip ok serializes"))
                        .map_err(|e| e.to_string())
                }
                .boxed()
            }),
        )?);

        let (s_acc, s_exec) = (shared.clone(), shared.clone());
        let nav = bus.register_action_server(
            NAV_ACTION,
            FnActionServer::new(
                move |goal: &Value| {
                    parse_goal(goal).is_some_and(|g| s_acc.world.lock().bounds.contains(g.point()))
                },
                move |goal: Value, ctx| {
                    let s = s_exec.clone();
                    async move {
                        let Some(g) = parse_goal(&goal) else {
                            return ActionOutcome::aborted(json!({"error": "bad goal"}));
                        };
                        if let Err(e) = s.world.lock().set_nav_goal(g) {
                            return ActionOutcome::aborted(json!({"error": e.to_string()}));
                        }
                        let mut rx = s.ticks.subscribe();
                        rx.borrow_and_update();
                        loop {
                            let state = s.world.lock().nav.clone();
                            let Some(nav) = state.filter(|n| n.goal == g) else {
                                return ActionOutcome::aborted(
                                    json!({"reached": false, "error": "goal preempted"}),
                                );
                            };
                            let result = |reached| {
                                json!({"reached": reached, "final_distance": nav.distance_remaining})
                            };
                            match nav.status {
                                NavStatus::Reached => return ActionOutcome::succeeded(result(true)),
                                NavStatus::Aborted => return ActionOutcome::aborted(result(false)),
                                NavStatus::Active => {}
                            }
                            if rx.changed().await.is_err() {
                                return ActionOutcome::aborted(result(false));
                            }
                            // the cancel flag is read between feedback emissions
                            if ctx.cancel_requested() {
                                let mut w = s.world.lock();
                                let d = w.nav.as_ref().map_or(nav.distance_remaining, |n| n.distance_remaining);
                                w.clear_nav();
                                return ActionOutcome::canceled(
                                    json!({"reached": false, "final_distance": d}),
                                );
                            }
                            let d = s.world.lock().nav.as_ref().map(|n| n.distance_remaining);
                            if let Some(d) = d {
                                ctx.feedback(json!({ "distance_remaining": d }));
                            }
                        }
                    }
                    .boxed()
                },
            ),
        )?;

        let resolutions = if shared.tractor.is_some() {
            Some(bus.subscribe(ANOMALY_RESOLUTIONS, DEFAULT_QUEUE_CAPACITY)?)
        } else {
            None
        };
        Ok(Self {
            bus,
            shared,
            cfg,
            resolutions,
            _services: services,
            _nav: nav,
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.shared.world.lock().tick
    }

    pub fn world(&self) -> World {
        self.shared.world.lock().clone()
    }

    pub fn tractor(&self) -> Option<Tractor> {
        self.shared.tractor.as_ref().map(|t| t.lock().clone())
    }

    pub fn manip_log(&self) -> Vec<ManipRecord> {
        self.shared.manip_log.lock().clone()
    }

    pub fn hashes(&self) -> BTreeMap<u64, String> {
        self.shared.hashes.lock().clone()
    }

    /// Hash of the current state, also recorded under the current tick.
    pub fn record_hash(&self) -> String {
        let w = self.shared.world.lock();
        let h = w.state_hash();
        self.shared.hashes.lock().insert(w.tick, h.clone());
        self.shared
            .trace("hash", &json!({"tick": w.tick, "hash": h}));
        h
    }

    fn apply_resolutions(&self) {
        let (Some(sub), Some(tractor)) = (&self.resolutions, &self.shared.tractor) else {
            return;
        };
        for env in sub.drain() {
            let Ok(msg) = serde_json::from_value::<ResolutionMessage>(env.payload.clone()) else {
                continue;
            };
            let mut w = self.shared.world.lock();
            let mut t = tractor.lock();
            let obstacle = match &t.state {
                rai_simworld::TractorState::Halted {
                    anomaly_id,
                    obstacle,
                    ..
                } if *anomaly_id == msg.anomaly_id => obstacle.clone(),
                _ => continue,
            };
            let fp = w.object(&obstacle).map(|o| o.footprint());
            let from = w.robot.pose.position();
            let effect = t.resolve(&mut w, msg.resolution);
            let applied = AppliedResolution {
                tick: w.tick,
                anomaly_id: msg.anomaly_id,
                from,
                next_waypoint: (msg.resolution == Resolution::ReplanRoute)
                    .then(|| t.route.get(t.next + effect.detour.len()).copied())
                    .flatten(),
                obstacle: fp,
                effect,
            };
            drop((w, t));
            self.shared.trace(
                "resolution",
                &serde_json::to_value(&applied).expect("serializes"),
            );
        }
    }

    /// Advances one tick: pending resolutions, tractor rules, world step,
    /// then snapshot and hash bookkeeping.
    pub fn tick(&self) -> u64 {
        self.apply_resolutions();
        let notice = self.shared.tractor.as_ref().and_then(|t| {
            let mut w = self.shared.world.lock();
            t.lock().update(&mut w)
        });
        if let Some(n) = notice {
            let payload = serde_json::to_value(&n).expect("notice serializes");
            let _ = self.bus.publish(ANOMALY_EVENTS, payload.clone());
            let _ = self.bus.publish(WORLD_ANOMALIES, payload);
        }
        let tick = {
            let mut w = self.shared.world.lock();
            w.step();
            w.tick
        };
        if HASH_TICKS.contains(&tick) {
            self.record_hash();
        }
        if self.cfg.snapshot_every > 0 && tick % self.cfg.snapshot_every == 0 {
            let snap = self.shared.world.lock().snapshot();
            let _ = self.bus.publish(WORLD_SNAPSHOT, snap);
        }
        self.shared.ticks.send_replace(tick);
        tick
    }

    pub fn tractor_finished(&self) -> bool {
        self.shared
            .tractor
            .as_ref()
            .is_some_and(|t| t.lock().is_finished())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgbus::ActionStatus;

    const OPEN: &str = r#"{"bounds":{"xmin":-10,"ymin":-10,"xmax":10,"ymax":10},
        "objects":[{"id":"chair_1","label":"chair","x":3,"y":4,"hx":0.3,"hy":0.3,"height":1}],
        "robot":{"x":0,"y":0,"heading":0}}"#;

    async fn drive(host: &WorldHost, n: u64) {
        for _ in 0..n {
            tokio::time::sleep(TICK).await;
            host.tick();
        }
    }

    #[tokio::test(start_paused = true)]
    async fn nav_goal_succeeds_with_feedback() {
        let bus = Bus::deterministic(1);
        let host = WorldHost::start(
            bus.clone(),
            World::from_json(OPEN).unwrap(),
            None,
            HostConfig::default(),
            None,
        )
        .unwrap();
        let h = bus
            .send_goal(NAV_ACTION, json!({"x": 5.0, "y": 0.0}))
            .unwrap();
        assert!(h.accepted());
        drive(&host, 12).await;
        let (status, result) = h.result().await;
        assert_eq!(status, ActionStatus::Succeeded);
        assert!(result["final_distance"].as_f64().unwrap() <= 0.25);
        let mut last = f64::INFINITY;
        while let Some(fb) = h.try_feedback() {
            let d = fb["distance_remaining"].as_f64().unwrap();
            assert!(d <= last);
            last = d;
        }
    }

    #[tokio::test(start_paused = true)]
    async fn out_of_bounds_rejected() {
        let bus = Bus::deterministic(1);
        let _host = WorldHost::start(
            bus.clone(),
            World::from_json(OPEN).unwrap(),
            None,
            HostConfig::default(),
            None,
        )
        .unwrap();
        let h = bus
            .send_goal(NAV_ACTION, json!({"x": 1e6, "y": 0.0}))
            .unwrap();
        assert_eq!(h.status(), ActionStatus::Rejected);
    }

    #[tokio::test(start_paused = true)]
    async fn cancel_mid_run() {
        let bus = Bus::deterministic(1);
        let host = Arc::new(
            WorldHost::start(
                bus.clone(),
                World::from_json(OPEN).unwrap(),
                None,
                HostConfig::default(),
                None,
            )
            .unwrap(),
        );
        let h = bus
            .send_goal(NAV_ACTION, json!({"x": 8.0, "y": 0.0}))
            .unwrap();
        let driver = {
            let host = host.clone();
            tokio::spawn(async move { drive(&host, 30).await })
        };
        tokio::time::sleep(Duration::from_millis(550)).await;
        assert_eq!(bus.cancel_goal(&h).await.unwrap(), ActionStatus::Canceled);
        driver.await.unwrap();
        assert!(host.world().nav.is_none());
    }

    #[tokio::test(start_paused = true)]
    async fn detect_and_manip_services() {
        let bus = Bus::deterministic(1);
        let host = Arc::new(
            WorldHost::start(
                bus.clone(),
                World::from_json(OPEN).unwrap(),
                None,
                HostConfig::default(),
                None,
            )
            .unwrap(),
        );
        let obs = bus
            .call_service(
                "detect",
                json!({"queries": ["chair"]}),
                Duration::from_secs(1),
            )
            .await
            .unwrap();
        assert_eq!(obs["detections"][0]["distance"], json!(5.0));
        let driver = {
            let host = host.clone();
            tokio::spawn(async move { drive(&host, 5).await })
        };
        let err = bus
            .call_service("manip", json!({"pick": "ghost"}), Duration::from_secs(1))
            .await
            .unwrap_err();
        assert!(err.to_string().contains("NOT_FOUND"));
        driver.await.unwrap();
        assert_eq!(host.manip_log()[0].code.as_deref(), Some("NOT_FOUND"));
    }
}
