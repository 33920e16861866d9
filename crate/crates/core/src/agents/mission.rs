//! Two-agent mission architecture: a conversational HRI agent that stays
//! responsive to the operator, and a state-machine control agent that executes
//! missions and reports each one exactly once.

use std::ops::{Add, Sub};
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use rai_simworld::geometry::unit_from_heading;
use rai_simworld::Vec2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::fsm::FsmDefinition;
use super::react::{react_loop, LoopStatus, ReactConfig};
use super::{Agent, AgentError, AgentHandle, Step};
use crate::llm::ChatMessage;
use crate::msgbus::{ActionStatus, Envelope, GoalHandle, Subscription, DEFAULT_QUEUE_CAPACITY};
use crate::toolkit::builtin::{fixed, render, MISSION_REQUESTS};
use crate::toolkit::ToolContext;

pub const HRI_IN: &str = "hri/in";
pub const HRI_OUT: &str = "hri/out";
pub const MISSION_STATUS: &str = "mission/status";
pub const NAV_ACTION: &str = "nav/goto";
pub const SUCCESS_TOLERANCE: f64 = 0.25;
/// How far short of the target's center the robot is sent.
pub const APPROACH_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionStatus {
    Pending,
    Executing,
    Succeeded,
    Failed,
}

impl MissionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, MissionStatus::Succeeded | MissionStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub mission_id: String,
    pub prompt: String,
    pub status: MissionStatus,
    pub report: String,
}

impl MissionRecord {
    pub fn pending(id: &str, prompt: &str) -> Self {
        Self {
            mission_id: id.to_string(),
            prompt: prompt.to_string(),
            status: MissionStatus::Pending,
            report: String::new(),
        }
    }

    /// Copy with a new status. Reports are kept only for terminal statuses.
    pub fn with_status(&self, status: MissionStatus, report: &str) -> Self {
        let report = if status.is_terminal() {
            if report.is_empty() {
                status_word(status).to_string()
            } else {
                report.to_string()
            }
        } else {
            String::new()
        };
        Self {
            status,
            report,
            ..self.clone()
        }
    }

    /// Report non-empty iff status terminal.
    pub fn is_consistent(&self) -> bool {
        self.status.is_terminal() == !self.report.is_empty()
    }

    pub fn describe(&self) -> String {
        let mut s = format!("mission {} {}", self.mission_id, status_word(self.status));
        if !self.report.is_empty() {
            s.push_str(": ");
            s.push_str(&self.report);
        }
        s
    }
}

fn status_word(s: MissionStatus) -> &'static str {
    match s {
        MissionStatus::Pending => "PENDING",
        MissionStatus::Executing => "EXECUTING",
        MissionStatus::Succeeded => "SUCCEEDED",
        MissionStatus::Failed => "FAILED",
    }
}

fn payload_text(p: &Value) -> String {
    p.get("text")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| render(p))
}

enum Incoming {
    Status(Envelope),
    Operator(Envelope),
}

/// Conversational agent bound to the operator topics.
pub struct HriAgent {
    cfg: ReactConfig,
    ctx: Arc<ToolContext>,
    inbox: Subscription,
    status: Subscription,
    outbox: String,
    history: Vec<ChatMessage>,
}

impl HriAgent {
    /// Subscribes immediately, so messages published after construction are seen.
    pub fn new(cfg: ReactConfig, ctx: Arc<ToolContext>) -> Result<Self, AgentError> {
        cfg.validate(Some(HRI_IN)).map_err(AgentError::Failed)?;
        let sub = |t| {
            ctx.bus
                .subscribe(t, DEFAULT_QUEUE_CAPACITY)
                .map_err(|e| AgentError::Failed(e.to_string()))
        };
        Ok(Self {
            inbox: sub(HRI_IN)?,
            status: sub(MISSION_STATUS)?,
            cfg: ReactConfig {
                outbox: None,
                ..cfg
            },
            ctx,
            outbox: HRI_OUT.to_string(),
            history: Vec::new(),
        })
    }

    fn relay(&self, env: &Envelope) {
        let text = match serde_json::from_value::<MissionRecord>(env.payload.clone()) {
            Ok(r) => r.describe(),
            Err(_) => payload_text(&env.payload),
        };
        let _ = self
            .ctx
            .bus
            .publish(&self.outbox, json!({"text": text, "mission": env.payload}));
    }

    async fn converse(&mut self, env: Envelope, h: &AgentHandle) -> Step {
        let text = payload_text(&env.payload);
        let mut msgs = std::mem::take(&mut self.history);
        if msgs.is_empty() {
            msgs = self.cfg.conversation(ChatMessage::user(&text));
        } else {
            msgs.push(ChatMessage::user(&text));
        }
        let r = react_loop(&self.cfg, &self.ctx, msgs, Some(h)).await;
        self.history = r.messages;
        if r.status == LoopStatus::Stopped {
            return Step::Done;
        }
        let reply = if r.final_text.is_empty() {
            format!(
                "sorry, something went wrong: {}",
                r.error.unwrap_or_default()
            )
        } else {
            r.final_text
        };
        self.ctx.trace(
            "turn",
            &json!({"request": env.id.to_string(), "iteration": h.iterations(), "status": r.status}),
        );
        let _ = self.ctx.bus.publish(
            &self.outbox,
            json!({"text": reply, "in_reply_to": env.id.to_string()}),
        );
        Step::Continue
    }
}

impl Agent for HriAgent {
    fn step<'a>(&'a mut self, h: &'a AgentHandle) -> BoxFuture<'a, Result<Step, AgentError>> {
        async move {
            for env in self.status.drain() {
                self.relay(&env);
            }
            let env = match self.inbox.try_recv() {
                Some(e) => e,
                None => {
                    let next = h
                        .or_stop(async {
                            tokio::select! {
                                biased;
                                e = self.status.recv() => Incoming::Status(e),
                                e = self.inbox.recv() => Incoming::Operator(e),
                            }
                        })
                        .await;
                    match next {
                        None => return Ok(Step::Done),
                        Some(Incoming::Status(e)) => {
                            self.relay(&e);
                            return Ok(Step::Continue);
                        }
                        Some(Incoming::Operator(e)) => e,
                    }
                }
            };
            Ok(self.converse(env, h).await)
        }
        .boxed()
    }
}

struct MissionCtx {
    tools: Arc<ToolContext>,
    plan: ReactConfig,
    stop: AgentHandle,
    poll: Duration,
    prompt: String,
    target: String,
    approach: Vec2,
    goal: Option<GoalHandle>,
    report: String,
}

async fn localize(c: &MissionCtx) -> Result<(Vec2, f64), String> {
    let v = c
        .tools
        .bus
        .call_service("localize", json!({}), c.tools.service_timeout)
        .await
        .map_err(|e| e.to_string())?;
    let num = |k: &str| {
        v[k].as_f64()
            .ok_or_else(|| format!("localize reply lacks {k}"))
    };
    Ok((Vec2::new(num("x")?, num("y")?), num("heading")?))
}

/// The model's final answer, reduced to a label.
fn target_label(text: &str) -> String {
    text.trim().trim_end_matches('.').trim().to_lowercase()
}

fn plan(c: &mut MissionCtx) -> BoxFuture<'_, String> {
    async move {
        let opening = ChatMessage::user(&format!(
            "Mission: {}\nLook around if needed, then reply with only the label of the object to navigate to.",
            c.prompt
        ));
        let r = react_loop(&c.plan, &c.tools, c.plan.conversation(opening), Some(&c.stop)).await;
        if r.status != LoopStatus::Succeeded {
            c.report = format!("planning failed: {}", r.error.unwrap_or_else(|| "stopped".into()));
            return "plan_failed".to_string();
        }
        c.target = target_label(&r.final_text);
        let Some(source) = c.tools.observer().cloned() else {
            c.report = "no observation source".into();
            return "plan_failed".to_string();
        };
        let seen = match source.detect(std::slice::from_ref(&c.target)).await {
            Ok(obs) => obs.matching(std::slice::from_ref(&c.target)),
            Err(e) => {
                c.report = format!("perception failed: {e}");
                return "plan_failed".to_string();
            }
        };
        let Some(det) = seen.first() else {
            c.report = "object not visible".into();
            return "not_visible".to_string();
        };
        let (pos, heading) = match localize(c).await {
            Ok(p) => p,
            Err(e) => {
                c.report = format!("localization failed: {e}");
                return "plan_failed".to_string();
            }
        };
        let u = unit_from_heading(heading + det.bearing);
        let center = pos.add(u.scale(det.distance));
        c.approach = center.sub(u.scale(APPROACH_OFFSET.min(det.distance)));
        c.tools.trace(
            "plan",
            &json!({"target": c.target, "object": det.id, "approach": {"x": c.approach.x, "y": c.approach.y}}),
        );
        "planned".to_string()
    }
    .boxed()
}

fn act(c: &mut MissionCtx) -> BoxFuture<'_, String> {
    async move {
        let goal = json!({"x": c.approach.x, "y": c.approach.y});
        match c.tools.bus.send_goal(NAV_ACTION, goal) {
            Err(e) => {
                c.report = format!("navigation unavailable: {e}");
                "rejected".to_string()
            }
            Ok(h) if !h.accepted() => {
                c.report = "navigation goal rejected".into();
                "rejected".to_string()
            }
            Ok(h) => {
                c.tools.remember_goal(h.clone());
                c.goal = Some(h);
                "accepted".to_string()
            }
        }
    }
    .boxed()
}

fn monitor(c: &mut MissionCtx) -> BoxFuture<'_, String> {
    async move {
        let goal = c.goal.clone().expect("ACT stored the goal");
        loop {
            if let Some((status, result)) = goal.outcome() {
                if status == ActionStatus::Succeeded {
                    return "succeeded".to_string();
                }
                c.report = format!("navigation ended with status {status}: {}", render(&result));
                return status.as_str().to_lowercase();
            }
            if c.stop.stop_requested() {
                let _ = c.tools.bus.cancel_goal(&goal).await;
                c.report = "stopped".into();
                return "stopped".to_string();
            }
            tokio::time::sleep(c.poll).await;
        }
    }
    .boxed()
}

fn verify(c: &mut MissionCtx) -> BoxFuture<'_, String> {
    async move {
        let (pos, _) = match localize(c).await {
            Ok(p) => p,
            Err(e) => {
                c.report = format!("localization failed: {e}");
                return "not_reached".to_string();
            }
        };
        let d = pos.distance(c.approach);
        c.tools.trace(
            "verify",
            &json!({"target": c.target, "approach": {"x": c.approach.x, "y": c.approach.y}, "distance": d}),
        );
        if d <= SUCCESS_TOLERANCE {
            c.report = format!("reached the {} (goal distance {})", c.target, fixed(d, 2));
            "verified".to_string()
        } else {
            c.report = format!("stopped {} from the goal", fixed(d, 2));
            "not_reached".to_string()
        }
    }
    .boxed()
}

fn mission_fsm() -> FsmDefinition<MissionCtx> {
    FsmDefinition::new("PLAN")
        .state("PLAN", plan)
        .state("ACT", act)
        .state("MONITOR", monitor)
        .state("VERIFY", verify)
        .terminal("DONE")
        .terminal("FAILED")
        .on("PLAN", "planned", "ACT")
        .otherwise("PLAN", "FAILED")
        .on("ACT", "accepted", "MONITOR")
        .otherwise("ACT", "FAILED")
        .on("MONITOR", "succeeded", "VERIFY")
        .otherwise("MONITOR", "FAILED")
        .on("VERIFY", "verified", "DONE")
        .otherwise("VERIFY", "FAILED")
}

/// Mission executor: one FSM run per request on `mission/requests`.
pub struct ControlAgent {
    plan: ReactConfig,
    ctx: Arc<ToolContext>,
    requests: Subscription,
    fsm: FsmDefinition<MissionCtx>,
    pub poll: Duration,
}

impl ControlAgent {
    pub fn new(plan: ReactConfig, ctx: Arc<ToolContext>) -> Result<Self, AgentError> {
        plan.validate(None).map_err(AgentError::Failed)?;
        let requests = ctx
            .bus
            .subscribe(MISSION_REQUESTS, DEFAULT_QUEUE_CAPACITY)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        Ok(Self {
            plan: ReactConfig {
                outbox: None,
                ..plan
            },
            ctx,
            requests,
            fsm: mission_fsm(),
            poll: Duration::from_millis(100),
        })
    }

    fn report(&self, rec: &MissionRecord) {
        let _ = self
            .ctx
            .bus
            .publish(MISSION_STATUS, serde_json::to_value(rec).expect("record"));
    }

    async fn execute(&self, rec: MissionRecord, h: &AgentHandle) {
        self.report(&rec.with_status(MissionStatus::Executing, ""));
        let mut c = MissionCtx {
            tools: self.ctx.clone(),
            plan: self.plan.clone(),
            stop: h.clone(),
            poll: self.poll,
            prompt: rec.prompt.clone(),
            target: String::new(),
            approach: Vec2::new(0.0, 0.0),
            goal: None,
            report: String::new(),
        };
        let (status, report) = match self.fsm.run(&mut c).await {
            Ok(run) => {
                self.ctx
                    .trace("fsm", &json!({"path": run.path, "events": run.events}));
                if run.terminal == "DONE" {
                    (MissionStatus::Succeeded, c.report)
                } else {
                    (MissionStatus::Failed, c.report)
                }
            }
            Err(e) => {
                self.ctx
                    .trace("fsm", &json!({"path": e.path(), "error": e.to_string()}));
                (MissionStatus::Failed, e.to_string())
            }
        };
        self.report(&rec.with_status(status, &report));
    }
}

impl Agent for ControlAgent {
    fn step<'a>(&'a mut self, h: &'a AgentHandle) -> BoxFuture<'a, Result<Step, AgentError>> {
        async move {
            let Some(env) = h.or_stop(self.requests.recv()).await else {
                return Ok(Step::Done);
            };
            match serde_json::from_value::<MissionRecord>(env.payload.clone()) {
                Ok(rec) if rec.status == MissionStatus::Pending => self.execute(rec, h).await,
                _ => self
                    .ctx
                    .trace("ignored_request", &json!({ "payload": env.payload })),
            }
            Ok(Step::Continue)
        }
        .boxed()
    }
}
