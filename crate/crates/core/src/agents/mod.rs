//! Agents: the run/stop contract, the ReAct loop, the state machine runner and
//! the agents used by the shipped scenarios.

pub mod fsm;
pub mod mission;
pub mod orchard;
pub mod react;

use std::future::Future;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use futures::future::BoxFuture;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;

pub use fsm::{FsmDefinition, FsmError, FsmRun};
pub use mission::{ControlAgent, HriAgent, MissionRecord, MissionStatus};
pub use orchard::AnomalyAgent;
pub use react::{react_loop, LoopStatus, ReactConfig, ReactResult, TaskAgent, STEP_LIMIT_TEXT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentState {
    Created,
    Running,
    Stopping,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("agent {0} is already running or finished")]
    AlreadyRunning(String),
    #[error("{0}")]
    Failed(String),
}

struct HandleInner {
    id: String,
    state: Mutex<AgentState>,
    stop: AtomicBool,
    notify: Notify,
    iterations: AtomicU64,
}

/// Shared run/stop handle. Cloning gives another view of the same agent.
#[derive(Clone)]
pub struct AgentHandle {
    inner: Arc<HandleInner>,
}

impl AgentHandle {
    pub fn new(id: &str) -> Self {
        Self {
            inner: Arc::new(HandleInner {
                id: id.to_string(),
                state: Mutex::new(AgentState::Created),
                stop: AtomicBool::new(false),
                notify: Notify::new(),
                iterations: AtomicU64::new(0),
            }),
        }
    }

    pub fn id(&self) -> &str {
        &self.inner.id
    }

    pub fn state(&self) -> AgentState {
        *self.inner.state.lock()
    }

    /// Loop iterations started so far.
    pub fn iterations(&self) -> u64 {
        self.inner.iterations.load(Ordering::SeqCst)
    }

    /// Latches the stop signal. Idempotent.
    pub fn stop(&self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        {
            let mut st = self.inner.state.lock();
            if *st == AgentState::Running {
                *st = AgentState::Stopping;
            }
        }
        self.inner.notify.notify_waiters();
    }

    pub fn stop_requested(&self) -> bool {
        self.inner.stop.load(Ordering::SeqCst)
    }

    /// Resolves once stop has been requested.
    pub async fn stopped(&self) {
        loop {
            let n = self.inner.notify.notified();
            tokio::pin!(n);
            n.as_mut().enable();
            if self.stop_requested() {
                return;
            }
            n.await;
        }
    }

    /// Runs `fut` unless stop is requested first.
    pub async fn or_stop<T>(&self, fut: impl Future<Output = T>) -> Option<T> {
        tokio::select! {
            biased;
            _ = self.stopped() => None,
            v = fut => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue,
    Done,
}

/// One agent loop. `step` is a single iteration; the runner checks the stop
/// signal between iterations.
pub trait Agent: Send {
    fn step<'a>(&'a mut self, handle: &'a AgentHandle) -> BoxFuture<'a, Result<Step, AgentError>>;
}

/// Drives `agent` until it reports `Done` or `handle` is stopped.
pub async fn run_agent(agent: &mut dyn Agent, handle: &AgentHandle) -> Result<(), AgentError> {
    {
        let mut st = handle.inner.state.lock();
        if *st != AgentState::Created {
            return Err(AgentError::AlreadyRunning(handle.id().to_string()));
        }
        if handle.stop_requested() {
            *st = AgentState::Stopped;
            return Ok(());
        }
        *st = AgentState::Running;
    }
    let mut result = Ok(());
    while !handle.stop_requested() {
        handle.inner.iterations.fetch_add(1, Ordering::SeqCst);
        match agent.step(handle).await {
            Ok(Step::Continue) => {}
            Ok(Step::Done) => break,
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    *handle.inner.state.lock() = AgentState::Stopped;
    result
}
