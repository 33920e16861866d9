//! Long-running goals: acceptance, streamed feedback, one terminal result.

use std::collections::VecDeque;
use std::fmt;
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Notify;
use uuid::Uuid;

use super::{Bus, BusError, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionStatus {
    Pending,
    Accepted,
    Rejected,
    Executing,
    Succeeded,
    Aborted,
    Canceled,
}

impl ActionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ActionStatus::Rejected
                | ActionStatus::Succeeded
                | ActionStatus::Aborted
                | ActionStatus::Canceled
        )
    }

    pub fn can_transition(self, to: ActionStatus) -> bool {
        use ActionStatus::*;
        matches!(
            (self, to),
            (Pending, Accepted)
                | (Pending, Rejected)
                | (Accepted, Executing)
                | (Executing, Succeeded)
                | (Executing, Aborted)
                | (Executing, Canceled)
        )
    }

    /// Whether `path` starts at PENDING, follows legal edges and ends in
    /// exactly one terminal status.
    pub fn is_legal_path(path: &[ActionStatus]) -> bool {
        path.first() == Some(&ActionStatus::Pending)
            && path.windows(2).all(|w| w[0].can_transition(w[1]))
            && path.iter().filter(|s| s.is_terminal()).count() == 1
            && path.last().is_some_and(|s| s.is_terminal())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionStatus::Pending => "PENDING",
            ActionStatus::Accepted => "ACCEPTED",
            ActionStatus::Rejected => "REJECTED",
            ActionStatus::Executing => "EXECUTING",
            ActionStatus::Succeeded => "SUCCEEDED",
            ActionStatus::Aborted => "ABORTED",
            ActionStatus::Canceled => "CANCELED",
        }
    }
}

impl fmt::Display for ActionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What an executor returns; `status` must be SUCCEEDED, ABORTED or CANCELED.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub status: ActionStatus,
    pub result: Value,
}

impl ActionOutcome {
    pub fn succeeded(result: Value) -> Self {
        Self {
            status: ActionStatus::Succeeded,
            result,
        }
    }

    pub fn aborted(result: Value) -> Self {
        Self {
            status: ActionStatus::Aborted,
            result,
        }
    }

    pub fn canceled(result: Value) -> Self {
        Self {
            status: ActionStatus::Canceled,
            result,
        }
    }
}

pub trait ActionServer: Send + Sync {
    /// Acceptance predicate, decided synchronously when the goal arrives.
    fn accept(&self, _goal: &Value) -> bool {
        true
    }

    fn execute(&self, goal: Value, ctx: GoalContext) -> BoxFuture<'static, ActionOutcome>;
}

type AcceptFn = dyn Fn(&Value) -> bool + Send + Sync;
type ExecFn = dyn Fn(Value, GoalContext) -> BoxFuture<'static, ActionOutcome> + Send + Sync;

/// Action server assembled from closures.
pub struct FnActionServer {
    accept: Box<AcceptFn>,
    exec: Box<ExecFn>,
}

impl FnActionServer {
    pub fn new<A, E>(accept: A, exec: E) -> Arc<Self>
    where
        A: Fn(&Value) -> bool + Send + Sync + 'static,
        E: Fn(Value, GoalContext) -> BoxFuture<'static, ActionOutcome> + Send + Sync + 'static,
    {
        Arc::new(Self {
            accept: Box::new(accept),
            exec: Box::new(exec),
        })
    }
}

impl ActionServer for FnActionServer {
    fn accept(&self, goal: &Value) -> bool {
        (self.accept)(goal)
    }

    fn execute(&self, goal: Value, ctx: GoalContext) -> BoxFuture<'static, ActionOutcome> {
        (self.exec)(goal, ctx)
    }
}

#[derive(Default)]
struct GoalState {
    history: Vec<ActionStatus>,
    feedback: VecDeque<Value>,
    last_feedback: Option<Value>,
    result: Option<(ActionStatus, Value)>,
}

pub(crate) struct GoalShared {
    pub(crate) id: Uuid,
    action: String,
    state: Mutex<GoalState>,
    changed: Notify,
    cancel: AtomicBool,
    cancel_notify: Notify,
}

impl GoalShared {
    fn push_status(&self, s: ActionStatus) {
        let mut st = self.state.lock();
        if let Some(prev) = st.history.last() {
            debug_assert!(prev.can_transition(s), "{prev} -> {s}");
        }
        st.history.push(s);
        drop(st);
        self.changed.notify_waiters();
    }

    fn status(&self) -> ActionStatus {
        *self.state.lock().history.last().expect("goal has a status")
    }
}

/// Executor-side view of a goal.
#[derive(Clone)]
pub struct GoalContext {
    bus: Bus,
    shared: Arc<GoalShared>,
}

impl GoalContext {
    pub fn goal_id(&self) -> Uuid {
        self.shared.id
    }

    pub fn feedback(&self, payload: Value) {
        let env = self.bus.make_envelope(
            Kind::ActFeedback,
            &self.shared.action,
            Some(self.shared.id),
            payload.clone(),
        );
        self.bus.emit(&env);
        {
            let mut st = self.shared.state.lock();
            st.feedback.push_back(payload.clone());
            st.last_feedback = Some(payload);
        }
        self.shared.changed.notify_waiters();
    }

    pub fn cancel_requested(&self) -> bool {
        self.shared.cancel.load(Ordering::SeqCst)
    }

    /// Resolves once a cancel has been requested.
    pub async fn cancelled(&self) {
        loop {
            let n = self.shared.cancel_notify.notified();
            tokio::pin!(n);
            n.as_mut().enable();
            if self.cancel_requested() {
                return;
            }
            n.await;
        }
    }
}

/// Client-side view of a goal.
#[derive(Clone)]
pub struct GoalHandle {
    bus: Bus,
    shared: Arc<GoalShared>,
}

impl fmt::Debug for GoalHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GoalHandle")
            .field("id", &self.shared.id)
            .field("action", &self.shared.action)
            .field("status", &self.status())
            .finish()
    }
}

impl GoalHandle {
    pub(crate) fn from_shared(bus: Bus, shared: Arc<GoalShared>) -> Self {
        Self { bus, shared }
    }

    pub fn id(&self) -> Uuid {
        self.shared.id
    }

    pub fn action(&self) -> &str {
        &self.shared.action
    }

    pub fn status(&self) -> ActionStatus {
        self.shared.status()
    }

    pub fn accepted(&self) -> bool {
        self.status() != ActionStatus::Rejected
    }

    /// Every status this goal has passed through, in order.
    pub fn history(&self) -> Vec<ActionStatus> {
        self.shared.state.lock().history.clone()
    }

    pub fn last_feedback(&self) -> Option<Value> {
        self.shared.state.lock().last_feedback.clone()
    }

    /// Terminal status and result, if the goal has finished.
    pub fn outcome(&self) -> Option<(ActionStatus, Value)> {
        self.shared.state.lock().result.clone()
    }

    pub fn try_feedback(&self) -> Option<Value> {
        self.shared.state.lock().feedback.pop_front()
    }

    /// Next feedback payload, or `None` once the goal is finished and all
    /// feedback has been consumed.
    pub async fn next_feedback(&self) -> Option<Value> {
        loop {
            let n = self.shared.changed.notified();
            tokio::pin!(n);
            n.as_mut().enable();
            {
                let mut st = self.shared.state.lock();
                if let Some(v) = st.feedback.pop_front() {
                    return Some(v);
                }
                if st.history.last().is_some_and(|s| s.is_terminal()) {
                    return None;
                }
            }
            n.await;
        }
    }

    /// Terminal status and result document. Rejected goals yield
    /// `(REJECTED, null)`.
    pub async fn result(&self) -> (ActionStatus, Value) {
        loop {
            let n = self.shared.changed.notified();
            tokio::pin!(n);
            n.as_mut().enable();
            {
                let st = self.shared.state.lock();
                if let Some(r) = &st.result {
                    return r.clone();
                }
            }
            n.await;
        }
    }

    pub async fn cancel(&self) -> Result<ActionStatus, BusError> {
        self.bus.cancel_goal(self).await
    }
}

impl Bus {
    pub fn send_goal(&self, action: &str, goal: Value) -> Result<GoalHandle, BusError> {
        super::validate_topic(action)?;
        let server = self
            .action_server(action)
            .ok_or_else(|| BusError::ActionServerNotFound(action.to_string()))?;
        let genv = self.make_envelope(Kind::ActGoal, action, None, goal.clone());
        self.emit(&genv);
        let shared = Arc::new(GoalShared {
            id: genv.id,
            action: action.to_string(),
            state: Mutex::new(GoalState {
                history: vec![ActionStatus::Pending],
                ..Default::default()
            }),
            changed: Notify::new(),
            cancel: AtomicBool::new(false),
            cancel_notify: Notify::new(),
        });
        let accepted =
            std::panic::catch_unwind(AssertUnwindSafe(|| server.accept(&goal))).unwrap_or(false);
        let aenv = self.make_envelope(
            Kind::ActAccept,
            action,
            Some(genv.id),
            json!({ "accepted": accepted }),
        );
        self.emit(&aenv);
        let handle = GoalHandle::from_shared(self.clone(), shared.clone());
        if !accepted {
            shared.state.lock().result = Some((ActionStatus::Rejected, Value::Null));
            shared.push_status(ActionStatus::Rejected);
            return Ok(handle);
        }
        shared.push_status(ActionStatus::Accepted);
        self.track_goal(shared.clone());
        let bus = self.clone();
        tokio::spawn(async move {
            shared.push_status(ActionStatus::Executing);
            let ctx = GoalContext {
                bus: bus.clone(),
                shared: shared.clone(),
            };
            let outcome = AssertUnwindSafe(server.execute(goal, ctx))
                .catch_unwind()
                .await
                .unwrap_or_else(|_| ActionOutcome::aborted(json!({"error": "executor panicked"})));
            let outcome = match outcome.status {
                ActionStatus::Succeeded | ActionStatus::Aborted | ActionStatus::Canceled => outcome,
                other => ActionOutcome::aborted(
                    json!({"error": format!("executor returned non-terminal status {other}")}),
                ),
            };
            let renv = bus.make_envelope(
                Kind::ActResult,
                &shared.action,
                Some(shared.id),
                json!({ "status": outcome.status, "result": outcome.result }),
            );
            bus.emit(&renv);
            shared.state.lock().result = Some((outcome.status, outcome.result));
            shared.push_status(outcome.status);
            bus.forget_goal(shared.id);
        });
        Ok(handle)
    }

    /// Requests cancellation and waits for the goal to finish. The returned
    /// status is CANCELED only if the executor honoured the request.
    pub async fn cancel_goal(&self, handle: &GoalHandle) -> Result<ActionStatus, BusError> {
        let status = handle.status();
        if status.is_terminal() {
            return Err(BusError::AlreadyTerminal {
                goal: handle.id(),
                status,
            });
        }
        handle.shared.cancel.store(true, Ordering::SeqCst);
        handle.shared.cancel_notify.notify_waiters();
        Ok(handle.result().await.0)
    }
}
