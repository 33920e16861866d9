use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use indexmap::IndexMap;
use parking_lot::Mutex;
use rai_simworld::{CameraObservation, World};
use serde_json::json;
use uuid::Uuid;

use crate::msgbus::{Bus, BusError, GoalHandle, Subscription, DEFAULT_QUEUE_CAPACITY};
use crate::whoami::IdentityBundle;

/// Where perception tools get detections from.
pub trait ObservationSource: Send + Sync {
    fn detect<'a>(
        &'a self,
        queries: &'a [String],
    ) -> BoxFuture<'a, Result<CameraObservation, String>>;
}

/// Calls the world's `detect` service over the bus.
pub struct BusDetector {
    bus: Bus,
    service: String,
    timeout: Duration,
}

impl BusDetector {
    pub fn new(bus: Bus) -> Arc<Self> {
        Arc::new(Self {
            bus,
            service: "detect".into(),
            timeout: Duration::from_secs(2),
        })
    }
}

impl ObservationSource for BusDetector {
    fn detect<'a>(
        &'a self,
        queries: &'a [String],
    ) -> BoxFuture<'a, Result<CameraObservation, String>> {
        async move {
            let v = self
                .bus
                .call_service(&self.service, json!({ "queries": queries }), self.timeout)
                .await
                .map_err(|e| e.to_string())?;
            serde_json::from_value(v).map_err(|e| format!("bad detect response: {e}"))
        }
        .boxed()
    }
}

/// Detections from a world value held directly, for tests and offline use.
pub struct StaticObservation(pub Mutex<World>);

impl StaticObservation {
    pub fn new(world: World) -> Arc<Self> {
        Arc::new(Self(Mutex::new(world)))
    }
}

impl ObservationSource for StaticObservation {
    fn detect<'a>(
        &'a self,
        queries: &'a [String],
    ) -> BoxFuture<'a, Result<CameraObservation, String>> {
        let w = self.0.lock();
        let obs = CameraObservation {
            tick: w.tick,
            detections: w.detect(queries),
        };
        async move { Ok(obs) }.boxed()
    }
}

/// Receives (source, kind, payload) trace events.
pub type Tracer = Arc<dyn Fn(&str, &str, &serde_json::Value) + Send + Sync>;

/// Per-agent state the built-in tools operate on.
pub struct ToolContext {
    pub bus: Bus,
    pub agent_id: String,
    pub service_timeout: Duration,
    identity: Option<Arc<IdentityBundle>>,
    observer: Option<Arc<dyn ObservationSource>>,
    goals: Mutex<IndexMap<Uuid, GoalHandle>>,
    inboxes: Mutex<HashMap<String, Arc<Subscription>>>,
    decision: Mutex<Option<Decision>>,
    next_mission: Mutex<u64>,
    tracer: Option<Tracer>,
}

/// A resolution picked by one of the anomaly tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub name: String,
    pub reason: String,
}

impl ToolContext {
    pub fn new(bus: Bus, agent_id: &str) -> Self {
        Self {
            bus,
            agent_id: agent_id.to_string(),
            service_timeout: Duration::from_secs(2),
            identity: None,
            observer: None,
            goals: Mutex::new(IndexMap::new()),
            inboxes: Mutex::new(HashMap::new()),
            decision: Mutex::new(None),
            next_mission: Mutex::new(0),
            tracer: None,
        }
    }

    pub fn with_tracer(mut self, tracer: Tracer) -> Self {
        self.tracer = Some(tracer);
        self
    }

    pub fn trace(&self, kind: &str, payload: &serde_json::Value) {
        if let Some(t) = &self.tracer {
            t(&self.agent_id, kind, payload);
        }
    }

    pub fn with_identity(mut self, bundle: Arc<IdentityBundle>) -> Self {
        self.identity = Some(bundle);
        self
    }

    pub fn with_observer(mut self, source: Arc<dyn ObservationSource>) -> Self {
        self.observer = Some(source);
        self
    }

    pub fn identity(&self) -> Option<&Arc<IdentityBundle>> {
        self.identity.as_ref()
    }

    pub fn observer(&self) -> Option<&Arc<dyn ObservationSource>> {
        self.observer.as_ref()
    }

    /// Subscribes now so that later `receive_message` calls see messages
    /// published from this point on.
    pub fn listen(&self, topic: &str) -> Result<(), BusError> {
        self.inbox(topic).map(|_| ())
    }

    pub(crate) fn inbox(&self, topic: &str) -> Result<Arc<Subscription>, BusError> {
        let mut inboxes = self.inboxes.lock();
        if let Some(s) = inboxes.get(topic) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.bus.subscribe(topic, DEFAULT_QUEUE_CAPACITY)?);
        inboxes.insert(topic.to_string(), s.clone());
        Ok(s)
    }

    pub fn remember_goal(&self, h: GoalHandle) {
        self.goals.lock().insert(h.id(), h);
    }

    pub fn goal(&self, id: Uuid) -> Option<GoalHandle> {
        self.goals.lock().get(&id).cloned()
    }

    pub fn goals(&self) -> Vec<GoalHandle> {
        self.goals.lock().values().cloned().collect()
    }

    pub fn set_decision(&self, name: &str, reason: &str) {
        *self.decision.lock() = Some(Decision {
            name: name.to_string(),
            reason: reason.to_string(),
        });
    }

    pub fn take_decision(&self) -> Option<Decision> {
        self.decision.lock().take()
    }

    /// Deterministic per-context mission ids: mission-1, mission-2, ...
    pub fn next_mission_id(&self) -> String {
        let mut n = self.next_mission.lock();
        *n += 1;
        format!("mission-{}", *n)
    }
}
