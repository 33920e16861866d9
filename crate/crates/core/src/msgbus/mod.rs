//! In-process connector bus with three communication modes.
//!
//! * publish/subscribe: best effort, bounded per-subscriber queues that drop
//!   the oldest message on overflow, no replay for late subscribers;
//! * services: request/response with a deadline, the caller always learns
//!   either the response or a definite failure;
//! * actions: long-running goals with acceptance, streamed feedback and a
//!   single terminal result (see [`action`]).
//!
//! Every envelope the bus creates is also handed to registered taps, which is
//! how transcripts observe traffic. Handlers and action executors run on
//! spawned tokio tasks, so all timing follows the runtime clock; tests use a
//! paused runtime as the fake-time scheduler.

pub mod action;
pub mod bridge;
pub mod clock;
pub mod envelope;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Notify;
use uuid::Uuid;

pub use action::{
    ActionOutcome, ActionServer, ActionStatus, FnActionServer, GoalContext, GoalHandle,
};
pub use clock::{Clock, IdSource, SystemClock, VirtualClock};
pub use envelope::{
    decode_envelope, encode_envelope, encode_envelope_string, validate_topic, CodecError, Envelope,
    Kind, WIRE_VERSION,
};

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("queue capacity must be at least 1")]
    InvalidCapacity,
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("service {0:?} not found")]
    ServiceNotFound(String),
    #[error("service {0:?} already registered")]
    DuplicateService(String),
    #[error("service {name:?} timed out after {ms} ms")]
    Timeout { name: String, ms: u64 },
    #[error("service handler failed: {0}")]
    HandlerError(String),
    #[error("no action server on {0:?}")]
    ActionServerNotFound(String),
    #[error("action server {0:?} already registered")]
    DuplicateActionServer(String),
    #[error("goal {goal} already finished with {status}")]
    AlreadyTerminal { goal: Uuid, status: ActionStatus },
    #[error("unknown goal {0}")]
    UnknownGoal(Uuid),
}

impl From<envelope::InvalidTopic> for BusError {
    fn from(e: envelope::InvalidTopic) -> Self {
        BusError::InvalidTopic(e.0)
    }
}

/// Bounded FIFO shared between the bus and one consumer.
pub(crate) struct Queue {
    buf: Mutex<VecDeque<Envelope>>,
    capacity: usize,
    notify: Notify,
    dropped: AtomicU64,
}

impl Queue {
    pub(crate) fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            buf: Mutex::new(VecDeque::new()),
            capacity,
            notify: Notify::new(),
            dropped: AtomicU64::new(0),
        })
    }

    pub(crate) fn push(&self, e: Envelope) {
        {
            let mut buf = self.buf.lock();
            if buf.len() == self.capacity {
                buf.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            buf.push_back(e);
        }
        self.notify.notify_one();
    }

    pub(crate) fn pop(&self) -> Option<Envelope> {
        self.buf.lock().pop_front()
    }

    pub(crate) async fn recv(&self) -> Envelope {
        loop {
            if let Some(e) = self.pop() {
                return e;
            }
            self.notify.notified().await;
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.buf.lock().len()
    }
}

/// Single-consumer receiving end of a topic.
pub struct Subscription {
    topic: String,
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.pop()
    }

    pub async fn recv(&self) -> Envelope {
        self.queue.recv().await
    }

    /// `None` if nothing arrives within `timeout` of runtime time.
    pub async fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        if let Some(e) = self.queue.pop() {
            return Some(e);
        }
        tokio::time::timeout(timeout, self.queue.recv()).await.ok()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages lost to overflow so far.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.buf.lock().drain(..).collect()
    }
}

pub type ServiceFuture = BoxFuture<'static, Result<Value, String>>;
pub type ServiceHandler = Arc<dyn Fn(Value) -> ServiceFuture + Send + Sync>;
pub type Tap = Arc<dyn Fn(&Envelope) + Send + Sync>;

struct ServiceEntry {
    reg: u64,
    handler: ServiceHandler,
}

struct ActionEntry {
    reg: u64,
    server: Arc<dyn ActionServer>,
}

#[derive(Default)]
struct Registry {
    topics: BTreeMap<String, Vec<Weak<Queue>>>,
    services: HashMap<String, ServiceEntry>,
    actions: HashMap<String, ActionEntry>,
    goals: HashMap<Uuid, Arc<action::GoalShared>>,
    next_reg: u64,
}

pub(crate) struct Inner {
    registry: Mutex<Registry>,
    clock: Arc<dyn Clock>,
    ids: IdSource,
    taps: RwLock<Vec<Tap>>,
}

#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    /// Wall-clock timestamps and random ids.
    pub fn new() -> Self {
        Self::with_parts(Arc::new(SystemClock), IdSource::Random)
    }

    /// Runtime-relative timestamps and seeded ids, for replayable runs.
    pub fn deterministic(seed: u64) -> Self {
        Self::with_parts(Arc::new(VirtualClock::new(0)), IdSource::seeded(seed))
    }

    pub fn with_parts(clock: Arc<dyn Clock>, ids: IdSource) -> Self {
        Self {
            inner: Arc::new(Inner {
                registry: Mutex::new(Registry::default()),
                clock,
                ids,
                taps: RwLock::new(Vec::new()),
            }),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.inner.clock.now_ms()
    }

    /// Observes every envelope the bus creates, in creation order.
    pub fn add_tap(&self, tap: Tap) {
        self.inner.taps.write().push(tap);
    }

    pub(crate) fn make_envelope(
        &self,
        kind: Kind,
        topic: &str,
        corr: Option<Uuid>,
        payload: Value,
    ) -> Envelope {
        Envelope {
            version: WIRE_VERSION,
            kind,
            id: self.inner.ids.next_id(),
            topic: topic.to_string(),
            corr,
            ts: self.inner.clock.now_ms(),
            payload,
        }
    }

    pub(crate) fn emit(&self, e: &Envelope) {
        let taps = self.inner.taps.read().clone();
        for tap in taps {
            tap(e);
        }
    }

    /// Best-effort broadcast; zero subscribers is not an error.
    pub fn publish(&self, topic: &str, payload: Value) -> Result<Uuid, BusError> {
        validate_topic(topic)?;
        let env = self.make_envelope(Kind::Pub, topic, None, payload);
        self.emit(&env);
        let queues: Vec<Arc<Queue>> = {
            let mut reg = self.inner.registry.lock();
            match reg.topics.get_mut(topic) {
                Some(list) => {
                    list.retain(|w| w.strong_count() > 0);
                    list.iter().filter_map(Weak::upgrade).collect()
                }
                None => Vec::new(),
            }
        };
        for q in queues {
            q.push(env.clone());
        }
        Ok(env.id)
    }

    pub fn subscribe(&self, topic: &str, capacity: usize) -> Result<Subscription, BusError> {
        validate_topic(topic)?;
        if capacity == 0 {
            return Err(BusError::InvalidCapacity);
        }
        let queue = Queue::new(capacity);
        self.inner
            .registry
            .lock()
            .topics
            .entry(topic.to_string())
            .or_default()
            .push(Arc::downgrade(&queue));
        Ok(Subscription {
            topic: topic.to_string(),
            queue,
        })
    }

    pub fn register_service(
        &self,
        name: &str,
        handler: ServiceHandler,
    ) -> Result<ServiceRegistration, BusError> {
        validate_topic(name)?;
        let mut reg = self.inner.registry.lock();
        if reg.services.contains_key(name) {
            return Err(BusError::DuplicateService(name.to_string()));
        }
        reg.next_reg += 1;
        let id = reg.next_reg;
        reg.services
            .insert(name.to_string(), ServiceEntry { reg: id, handler });
        Ok(ServiceRegistration {
            bus: Arc::downgrade(&self.inner),
            name: name.to_string(),
            reg: id,
        })
    }

    /// Registers a synchronous handler.
    pub fn register_service_fn<F>(&self, name: &str, f: F) -> Result<ServiceRegistration, BusError>
    where
        F: Fn(Value) -> Result<Value, String> + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        self.register_service(
            name,
            Arc::new(move |req| {
                let f = f.clone();
                async move { f(req) }.boxed()
            }),
        )
    }

    pub async fn call_service(
        &self,
        name: &str,
        request: Value,
        timeout: Duration,
    ) -> Result<Value, BusError> {
        validate_topic(name)?;
        if timeout.is_zero() {
            return Err(BusError::InvalidTimeout);
        }
        let handler = self
            .inner
            .registry
            .lock()
            .services
            .get(name)
            .map(|s| s.handler.clone())
            .ok_or_else(|| BusError::ServiceNotFound(name.to_string()))?;
        let req = self.make_envelope(Kind::SrvReq, name, None, request.clone());
        self.emit(&req);
        let task = tokio::spawn(handler(request));
        let abort = task.abort_handle();
        let outcome = match tokio::time::timeout(timeout, task).await {
            Err(_) => {
                abort.abort();
                Err(BusError::Timeout {
                    name: name.to_string(),
                    ms: timeout.as_millis() as u64,
                })
            }
            Ok(Err(join)) => Err(BusError::HandlerError(format!("handler panicked: {join}"))),
            Ok(Ok(Err(msg))) => Err(BusError::HandlerError(msg)),
            Ok(Ok(Ok(v))) => Ok(v),
        };
        let payload = match &outcome {
            Ok(v) => v.clone(),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let res = self.make_envelope(Kind::SrvRes, name, Some(req.id), payload);
        self.emit(&res);
        outcome
    }

    pub fn register_action_server(
        &self,
        name: &str,
        server: Arc<dyn ActionServer>,
    ) -> Result<ActionRegistration, BusError> {
        validate_topic(name)?;
        let mut reg = self.inner.registry.lock();
        if reg.actions.contains_key(name) {
            return Err(BusError::DuplicateActionServer(name.to_string()));
        }
        reg.next_reg += 1;
        let id = reg.next_reg;
        reg.actions
            .insert(name.to_string(), ActionEntry { reg: id, server });
        Ok(ActionRegistration {
            bus: Arc::downgrade(&self.inner),
            name: name.to_string(),
            reg: id,
        })
    }

    pub(crate) fn action_server(&self, name: &str) -> Option<Arc<dyn ActionServer>> {
        self.inner
            .registry
            .lock()
            .actions
            .get(name)
            .map(|a| a.server.clone())
    }

    pub(crate) fn track_goal(&self, g: Arc<action::GoalShared>) {
        self.inner.registry.lock().goals.insert(g.id, g);
    }

    pub(crate) fn forget_goal(&self, id: Uuid) {
        self.inner.registry.lock().goals.remove(&id);
    }

    /// Handle for a goal that is still running, by goal id.
    pub fn goal(&self, id: Uuid) -> Option<GoalHandle> {
        let shared = self.inner.registry.lock().goals.get(&id).cloned()?;
        Some(GoalHandle::from_shared(self.clone(), shared))
    }

    /// Cancels a running goal by id, e.g. on behalf of an operator.
    pub async fn cancel_goal_id(&self, id: Uuid) -> Result<ActionStatus, BusError> {
        let handle = self.goal(id).ok_or(BusError::UnknownGoal(id))?;
        self.cancel_goal(&handle).await
    }
}

/// Keeps a service registered; dropping it deregisters the handler.
pub struct ServiceRegistration {
    bus: Weak<Inner>,
    name: String,
    reg: u64,
}

impl Drop for ServiceRegistration {
    fn drop(&mut self) {
        if let Some(inner) = self.bus.upgrade() {
            let mut reg = inner.registry.lock();
            if reg
                .services
                .get(&self.name)
                .is_some_and(|s| s.reg == self.reg)
            {
                reg.services.remove(&self.name);
            }
        }
    }
}

/// Keeps an action server registered; dropping it deregisters the server.
pub struct ActionRegistration {
    bus: Weak<Inner>,
    name: String,
    reg: u64,
}

impl Drop for ActionRegistration {
    fn drop(&mut self) {
        if let Some(inner) = self.bus.upgrade() {
            let mut reg = inner.registry.lock();
            if reg
                .actions
                .get(&self.name)
                .is_some_and(|a| a.reg == self.reg)
            {
                reg.actions.remove(&self.name);
            }
        }
    }
}
