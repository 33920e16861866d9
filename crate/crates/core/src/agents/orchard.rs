//! Anomaly resolver for the orchard scenario. The rule-based tractor itself
//! runs inside the world host; this agent only decides what to do when it halts.

use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;
use rai_simworld::{AnomalyNotice, Resolution};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::react::{react_loop, LoopStatus, ReactConfig};
use super::{Agent, AgentError, AgentHandle, Step};
use crate::msgbus::{Subscription, DEFAULT_QUEUE_CAPACITY};
use crate::toolkit::builtin::{fixed, resolution_tools};
use crate::toolkit::ToolContext;
use crate::whoami::EmbodimentCondition;

pub const ANOMALY_EVENTS: &str = "anomaly/events";
pub const ANOMALY_RESOLUTIONS: &str = "anomaly/resolutions";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionMessage {
    pub anomaly_id: u64,
    pub resolution: Resolution,
    pub reason: String,
}

/// Text of the first user turn for an anomaly.
pub fn describe_anomaly(n: &AnomalyNotice) -> String {
    let seen: Vec<String> = n
        .observation
        .detections
        .iter()
        .map(|d| {
            format!(
                "{} at {} m, bearing {} deg",
                d.label,
                fixed(d.distance, 2),
                fixed(d.bearing, 1)
            )
        })
        .collect();
    format!(
        "Anomaly {}: the tractor stopped {} m before an unexpected {} ({}) on its route.\nCamera: {}.\nChoose exactly one response tool.",
        n.anomaly_id,
        fixed(n.distance, 2),
        n.label,
        n.obstacle,
        if seen.is_empty() { "nothing detected".into() } else { seen.join("; ") }
    )
}

pub struct AnomalyAgent {
    cfg: ReactConfig,
    ctx: Arc<ToolContext>,
    condition: EmbodimentCondition,
    events: Subscription,
}

impl AnomalyAgent {
    /// The tool set is always the five resolution tools, whatever `cfg` holds.
    pub fn new(
        cfg: ReactConfig,
        ctx: Arc<ToolContext>,
        condition: EmbodimentCondition,
    ) -> Result<Self, AgentError> {
        cfg.validate(None).map_err(AgentError::Failed)?;
        let events = ctx
            .bus
            .subscribe(ANOMALY_EVENTS, DEFAULT_QUEUE_CAPACITY)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        let names: Vec<&str> = Resolution::ALL.iter().map(|r| r.name()).collect();
        let cfg = ReactConfig {
            tools: resolution_tools(),
            outbox: None,
            ..cfg
        }
        .with_terminal_tools(&names);
        Ok(Self {
            cfg,
            ctx,
            condition,
            events,
        })
    }

    /// One-shot conversation for `notice`; always yields one of the five resolutions.
    pub async fn resolve(
        &self,
        notice: &AnomalyNotice,
        h: Option<&AgentHandle>,
    ) -> ResolutionMessage {
        self.ctx.take_decision();
        let opening = self.condition.opening_message(&describe_anomaly(notice));
        let msgs = self.cfg.conversation(opening);
        self.ctx.trace(
            "conversation",
            &json!({"anomaly_id": notice.anomaly_id, "messages": msgs}),
        );
        let r = react_loop(&self.cfg, &self.ctx, msgs, h).await;
        let decision = self
            .ctx
            .take_decision()
            .and_then(|d| Resolution::from_name(&d.name).map(|r| (r, d.reason)));
        let (resolution, reason) = match decision {
            Some(d) => d,
            None => {
                let why = match r.status {
                    LoopStatus::Succeeded => "no resolution tool called".to_string(),
                    _ => r.error.unwrap_or_else(|| "stopped".into()),
                };
                (Resolution::AbortTask, format!("fail-safe: {why}"))
            }
        };
        ResolutionMessage {
            anomaly_id: notice.anomaly_id,
            resolution,
            reason,
        }
    }
}

impl Agent for AnomalyAgent {
    fn step<'a>(&'a mut self, h: &'a AgentHandle) -> BoxFuture<'a, Result<Step, AgentError>> {
        async move {
            let Some(env) = h.or_stop(self.events.recv()).await else {
                return Ok(Step::Done);
            };
            let notice: AnomalyNotice = match serde_json::from_value(env.payload.clone()) {
                Ok(n) => n,
                Err(e) => {
                    self.ctx
                        .trace("ignored_event", &json!({"error": e.to_string()}));
                    return Ok(Step::Continue);
                }
            };
            let msg = self.resolve(&notice, None).await;
            let _ = self.ctx.bus.publish(
                ANOMALY_RESOLUTIONS,
                serde_json::to_value(&msg).expect("resolution serializes"),
            );
            Ok(Step::Continue)
        }
        .boxed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedProvider};
    use crate::msgbus::Bus;
    use rai_simworld::CameraObservation;

    fn notice(label: &str) -> AnomalyNotice {
        AnomalyNotice {
            anomaly_id: 1,
            tick: 12,
            obstacle: format!("{label}_1"),
            label: label.into(),
            distance: 1.4,
            observation: CameraObservation {
                tick: 12,
                detections: vec![],
            },
        }
    }

    fn agent(script: Vec<ScriptEntry>) -> AnomalyAgent {
        let provider = Arc::new(ScriptedProvider::new(script));
        let cfg =
            ReactConfig::new(provider, Default::default()).with_system_prompt("I am a tractor.");
        AnomalyAgent::new(
            cfg,
            Arc::new(ToolContext::new(Bus::new(), "anomaly")),
            EmbodimentCondition::LanguageOnly,
        )
        .unwrap()
    }

    #[tokio::test]
    async fn scripted_choice() {
        let a = agent(vec![ScriptEntry::call(
            "drive_forward",
            json!({"reason": "small branch"}),
        )
        .when("branch")]);
        let m = a.resolve(&notice("branch"), None).await;
        assert_eq!(m.resolution, Resolution::DriveForward);
        assert_eq!(m.reason, "small branch");
    }

    #[tokio::test]
    async fn exhausted_script_aborts() {
        let m = agent(vec![]).resolve(&notice("rock"), None).await;
        assert_eq!(m.resolution, Resolution::AbortTask);
        assert!(m.reason.contains("script exhausted"));
    }

    #[tokio::test]
    async fn unknown_tool_then_text_aborts() {
        let a = agent(vec![ScriptEntry::text("I am not sure")]);
        let m = a.resolve(&notice("person"), None).await;
        assert_eq!(m.resolution, Resolution::AbortTask);
    }
}
