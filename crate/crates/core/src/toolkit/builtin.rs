//! The built-in tool set used by the shipped scenarios.

use std::sync::Arc;
use std::time::Duration;

use futures::FutureExt;
use rai_simworld::Resolution;
use serde_json::{json, Map, Value};
use uuid::Uuid;

use super::args;
use super::{ContentPart, FnTool, ParamType, Tool, ToolContext, ToolRegistry, ToolSpec};
use crate::agents::mission::MissionRecord;
use crate::msgbus::BusError;

pub const MISSION_REQUESTS: &str = "mission/requests";

/// Payload text parsed as JSON when possible, otherwise wrapped as `{"text": …}`.
pub fn parse_payload(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| json!({ "text": text }))
}

/// Canonical compact JSON (object keys sorted).
pub fn render(v: &Value) -> String {
    serde_json::to_string(v).expect("json value serializes")
}

/// Fixed-decimal formatting that never prints a negative zero.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn text(s: impl Into<String>) -> Vec<ContentPart> {
    vec![ContentPart::Text(s.into())]
}

fn service_error(e: BusError) -> String {
    match e {
        BusError::HandlerError(msg) => msg,
        other => other.to_string(),
    }
}

pub fn publish_message() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new("publish_message", "Publish a message on a bus topic.")
            .unwrap()
            .required("topic", ParamType::Text, "Topic name, e.g. hri/out")
            .required("payload", ParamType::Text, "JSON document or plain text"),
        |a, ctx| {
            async move {
                let topic = args::text(a, "topic").unwrap_or_default();
                let payload = parse_payload(args::text(a, "payload").unwrap_or_default());
                ctx.bus.publish(topic, payload).map_err(|e| e.to_string())?;
                Ok(text("published"))
            }
            .boxed()
        },
    )
}

pub fn receive_message() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "receive_message",
            "Wait for the next message on a topic and return its payload.",
        )
        .unwrap()
        .required("topic", ParamType::Text, "Topic name")
        .required(
            "timeout_ms",
            ParamType::Integer,
            "How long to wait, in milliseconds",
        ),
        |a, ctx| {
            async move {
                let topic = args::text(a, "topic").unwrap_or_default();
                let t = args::int(a, "timeout_ms").unwrap_or(0);
                if t < 0 {
                    return Err("timeout_ms must be non-negative".to_string());
                }
                let inbox = ctx.inbox(topic).map_err(|e| e.to_string())?;
                let got = match inbox.try_recv() {
                    Some(e) => Some(e),
                    None if t == 0 => None,
                    None => inbox.recv_timeout(Duration::from_millis(t as u64)).await,
                };
                Ok(text(match got {
                    Some(e) => render(&e.payload),
                    None => format!("no message within {t} ms"),
                }))
            }
            .boxed()
        },
    )
}

pub fn call_service() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "call_service",
            "Call a bus service and return its response.",
        )
        .unwrap()
        .required("name", ParamType::Text, "Service name")
        .required("request", ParamType::Text, "JSON request document")
        .optional(
            "timeout_ms",
            ParamType::Integer,
            "Deadline in milliseconds (default 1000)",
        ),
        |a, ctx| {
            async move {
                let name = args::text(a, "name").unwrap_or_default();
                let req = parse_payload(args::text(a, "request").unwrap_or_default());
                let t = args::int(a, "timeout_ms").unwrap_or(1000).max(0) as u64;
                let v = ctx
                    .bus
                    .call_service(name, req, Duration::from_millis(t))
                    .await
                    .map_err(|e| e.to_string())?;
                Ok(text(render(&v)))
            }
            .boxed()
        },
    )
}

fn goal_arg(
    a: &Map<String, Value>,
    ctx: &ToolContext,
) -> Result<crate::msgbus::GoalHandle, String> {
    let raw = args::text(a, "goal_id").unwrap_or_default();
    let id = Uuid::parse_str(raw).map_err(|_| format!("unknown goal id {raw:?}"))?;
    ctx.goal(id)
        .ok_or_else(|| format!("unknown goal id {raw:?}"))
}

pub fn start_action() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "start_action",
            "Send a goal to an action server. Returns as soon as the goal is accepted or rejected.",
        )
        .unwrap()
        .required("name", ParamType::Text, "Action name, e.g. nav/goto")
        .required("goal", ParamType::Text, "JSON goal document"),
        |a, ctx| {
            async move {
                let name = args::text(a, "name").unwrap_or_default();
                let goal = parse_payload(args::text(a, "goal").unwrap_or_default());
                let h = ctx.bus.send_goal(name, goal).map_err(|e| e.to_string())?;
                let id = h.id();
                let accepted = h.accepted();
                ctx.remember_goal(h);
                Ok(text(if accepted {
                    format!("accepted, goal_id={id}")
                } else {
                    format!("rejected, goal_id={id}")
                }))
            }
            .boxed()
        },
    )
}

pub fn get_action_status() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "get_action_status",
            "Current status and most recent feedback of a goal started earlier.",
        )
        .unwrap()
        .required("goal_id", ParamType::Text, "Id returned by start_action"),
        |a, ctx| {
            async move {
                let h = goal_arg(a, ctx)?;
                let fb = h.last_feedback().unwrap_or(Value::Null);
                let mut line = format!("status={} feedback={}", h.status(), render(&fb));
                if let Some((_, result)) = h.outcome() {
                    line.push_str(&format!(" result={}", render(&result)));
                }
                Ok(text(line))
            }
            .boxed()
        },
    )
}

pub fn cancel_action() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "cancel_action",
            "Cancel a running goal and report its terminal status.",
        )
        .unwrap()
        .required("goal_id", ParamType::Text, "Id returned by start_action"),
        |a, ctx| {
            async move {
                let h = goal_arg(a, ctx)?;
                let status = ctx.bus.cancel_goal(&h).await.map_err(|e| e.to_string())?;
                Ok(text(status.as_str()))
            }
            .boxed()
        },
    )
}

pub fn get_distance_to_objects() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "get_distance_to_objects",
            "Distance and bearing from the robot to visible objects matching the given names.",
        )
        .unwrap()
        .required(
            "object_names",
            ParamType::TextList,
            "Object names to look for",
        ),
        |a, ctx| {
            async move {
                let names = args::text_list(a, "object_names");
                let source = ctx
                    .observer()
                    .ok_or_else(|| "no observation source".to_string())?;
                let obs = source.detect(&names).await?;
                Ok(text(distance_report(&names, &obs)))
            }
            .boxed()
        },
    )
}

/// One line per matching detection, nearest first, then one
/// "not visible" line per name that matched nothing.
pub fn distance_report(names: &[String], obs: &rai_simworld::CameraObservation) -> String {
    let mut hits = obs.matching(names);
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let mut lines: Vec<String> = hits
        .iter()
        .map(|d| {
            format!(
                "{}: distance={} bearing={}",
                d.label,
                fixed(d.distance, 2),
                fixed(d.bearing, 1)
            )
        })
        .collect();
    for n in names {
        let q = n.to_lowercase();
        if !hits.iter().any(|d| d.label.to_lowercase().contains(&q)) {
            lines.push(format!("{n}: not visible"));
        }
    }
    if lines.is_empty() {
        lines.push("nothing visible".into());
    }
    lines.join("\n")
}

pub fn query_identity() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "query_identity",
            "Search the robot's own documentation (body, sensors, capabilities, rules).",
        )
        .unwrap()
        .required("question", ParamType::Text, "What to look up")
        .optional("k", ParamType::Integer, "Number of snippets (default 3)"),
        |a, ctx| {
            async move {
                let bundle = ctx
                    .identity()
                    .ok_or_else(|| "no identity loaded".to_string())?;
                let q = args::text(a, "question").unwrap_or_default();
                let k = args::int(a, "k").unwrap_or(3);
                if k < 1 {
                    return Err("k must be positive".into());
                }
                let hits = bundle
                    .store
                    .query(q, k as usize)
                    .map_err(|e| e.to_string())?;
                let lines: Vec<String> = hits
                    .iter()
                    .enumerate()
                    .map(|(i, (c, score))| {
                        format!("{}. [{}] {}", i + 1, fixed(*score, 3), c.text.trim())
                    })
                    .collect();
                Ok(text(lines.join("\n")))
            }
            .boxed()
        },
    )
}

pub fn dispatch_mission() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "dispatch_mission",
            "Hand a physical task to the mission executor. Returns immediately; progress is reported later.",
        )
        .unwrap()
        .required("prompt", ParamType::Text, "The operator's task, verbatim"),
        |a, ctx| {
            async move {
                let prompt = args::text(a, "prompt").unwrap_or_default();
                let id = ctx.next_mission_id();
                let rec = MissionRecord::pending(&id, prompt);
                ctx.bus
                    .publish(MISSION_REQUESTS, serde_json::to_value(&rec).expect("record"))
                    .map_err(|e| e.to_string())?;
                Ok(text(format!("dispatched {id}")))
            }
            .boxed()
        },
    )
}

fn manip_call(
    ctx: &ToolContext,
    req: Value,
) -> futures::future::BoxFuture<'_, Result<Vec<ContentPart>, String>> {
    async move {
        let v = ctx
            .bus
            .call_service("manip", req, ctx.service_timeout)
            .await
            .map_err(service_error)?;
        let place = match v.get("supported_by").and_then(Value::as_str) {
            Some(s) => format!(" on {s}"),
            None => String::new(),
        };
        Ok(text(format!(
            "ok: {} at ({}, {}) z={}{}",
            v["object"].as_str().unwrap_or("?"),
            fixed(v["x"].as_f64().unwrap_or(0.0), 2),
            fixed(v["y"].as_f64().unwrap_or(0.0), 2),
            fixed(v["z"].as_f64().unwrap_or(0.0), 2),
            place
        )))
    }
    .boxed()
}

pub fn pick_object() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new("pick_object", "Grasp an object by id.")
            .unwrap()
            .required("object_id", ParamType::Text, "Object id"),
        |a, ctx| manip_call(ctx, json!({ "pick": args::text(a, "object_id") })),
    )
}

pub fn place_object_at() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "place_object_at",
            "Put the held object down on the table at (x, y).",
        )
        .unwrap()
        .required("x", ParamType::Number, "Table x")
        .required("y", ParamType::Number, "Table y"),
        |a, ctx| {
            manip_call(
                ctx,
                json!({ "place_at": { "x": args::number(a, "x"), "y": args::number(a, "y") } }),
            )
        },
    )
}

pub fn place_object_on() -> Arc<dyn Tool> {
    FnTool::new(
        ToolSpec::new(
            "place_object_on",
            "Put the held object on top of another object.",
        )
        .unwrap()
        .required("target_id", ParamType::Text, "Object to stack onto"),
        |a, ctx| manip_call(ctx, json!({ "place_on": args::text(a, "target_id") })),
    )
}

fn resolution_description(r: Resolution) -> &'static str {
    match r {
        Resolution::ReplanRoute => "Plan a detour around the obstacle and continue.",
        Resolution::DriveForward => "Drive over the obstacle and continue on the route.",
        Resolution::FlashSignal => "Flash the warning lights, then check again.",
        Resolution::SoundSignal => "Sound the horn, then check again.",
        Resolution::AbortTask => "Stop and abandon the task.",
    }
}

pub fn resolution_tool(r: Resolution) -> Arc<dyn Tool> {
    let name = r.name();
    FnTool::new(
        ToolSpec::new(name, resolution_description(r))
            .unwrap()
            .optional("reason", ParamType::Text, "Why this response fits"),
        move |a, ctx| {
            async move {
                ctx.set_decision(name, args::text(a, "reason").unwrap_or_default());
                Ok(text(format!("resolution {name} selected")))
            }
            .boxed()
        },
    )
}

pub fn resolution_tools() -> ToolRegistry {
    Resolution::ALL
        .iter()
        .fold(ToolRegistry::new(), |r, res| r.with(resolution_tool(*res)))
}

/// Looks up a built-in tool by name.
pub fn by_name(name: &str) -> Option<Arc<dyn Tool>> {
    Some(match name {
        "publish_message" => publish_message(),
        "receive_message" => receive_message(),
        "call_service" => call_service(),
        "start_action" => start_action(),
        "get_action_status" => get_action_status(),
        "cancel_action" => cancel_action(),
        "get_distance_to_objects" => get_distance_to_objects(),
        "query_identity" => query_identity(),
        "dispatch_mission" => dispatch_mission(),
        "pick_object" => pick_object(),
        "place_object_at" => place_object_at(),
        "place_object_on" => place_object_on(),
        other => resolution_tool(Resolution::from_name(other)?),
    })
}

pub fn registry_of(names: &[&str]) -> Result<ToolRegistry, String> {
    let mut reg = ToolRegistry::new();
    for n in names {
        let tool = by_name(n).ok_or_else(|| format!("unknown tool {n:?}"))?;
        reg.register(tool).map_err(|e| e.to_string())?;
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgbus::{ActionOutcome, ActionStatus, Bus, FnActionServer};
    use crate::toolkit::{execute, OutcomeStatus, StaticObservation, ToolCall};
    use rai_simworld::World;

    fn run(
        reg: &ToolRegistry,
        ctx: &ToolContext,
        name: &str,
        a: Value,
    ) -> super::super::ToolOutcome {
        futures::executor::block_on(execute(&ToolCall::new("c", name, a), reg, ctx))
    }

    #[tokio::test]
    async fn publish_parse_rule() {
        let bus = Bus::new();
        let sub = bus.subscribe("a/b", 4).unwrap();
        let say = bus.subscribe("hri/say", 4).unwrap();
        let ctx = ToolContext::new(bus, "t");
        let reg = registry_of(&["publish_message"]).unwrap();
        let (reg, ctx) = (&reg, &ctx);
        let call = move |a| {
            let c = ToolCall::new("c", "publish_message", a);
            async move { execute(&c, reg, ctx).await }
        };
        let o = call(json!({"topic": "hri/say", "payload": "hello"})).await;
        assert_eq!(
            (o.status, o.text()),
            (OutcomeStatus::Ok, "published".into())
        );
        assert_eq!(say.drain()[0].payload, json!({"text": "hello"}));
        call(json!({"topic": "a/b", "payload": "{\"k\":1}"})).await;
        assert_eq!(sub.drain()[0].payload, json!({"k": 1}));
        let o = call(json!({"topic": "", "payload": "x"})).await;
        assert_eq!(o.status, OutcomeStatus::Error);
        assert!(o.text().contains("invalid topic"));
    }

    #[tokio::test]
    async fn receive_fifo_and_timeout() {
        let bus = Bus::new();
        let ctx = ToolContext::new(bus.clone(), "t");
        ctx.listen("hri/in").unwrap();
        bus.publish("hri/in", json!({"text": "first"})).unwrap();
        bus.publish("hri/in", json!({"text": "second"})).unwrap();
        let reg = registry_of(&["receive_message"]).unwrap();
        let (reg, ctx) = (&reg, &ctx);
        let call = move |a| {
            let c = ToolCall::new("c", "receive_message", a);
            async move { execute(&c, reg, ctx).await }
        };
        let o = call(json!({"topic": "hri/in", "timeout_ms": 10})).await;
        assert_eq!(o.text(), r#"{"text":"first"}"#);
        call(json!({"topic": "hri/in", "timeout_ms": 10})).await;
        let o = call(json!({"topic": "hri/in", "timeout_ms": 10})).await;
        assert_eq!(
            (o.status, o.text()),
            (OutcomeStatus::Ok, "no message within 10 ms".into())
        );
    }

    #[tokio::test]
    async fn call_service_errors() {
        let bus = Bus::new();
        let _r = bus.register_service_fn("echo", Ok).unwrap();
        let ctx = ToolContext::new(bus, "t");
        let reg = registry_of(&["call_service"]).unwrap();
        let (reg, ctx) = (&reg, &ctx);
        let call = move |a| {
            let c = ToolCall::new("c", "call_service", a);
            async move { execute(&c, reg, ctx).await }
        };
        let o = call(json!({"name": "echo", "request": "{\"x\":1}"})).await;
        assert_eq!(o.text(), r#"{"x":1}"#);
        let o = call(json!({"name": "missing", "request": "{}"})).await;
        assert_eq!(o.status, OutcomeStatus::Error);
        assert!(o.text().contains("not found"));
    }

    fn chair_world(objects: &str) -> World {
        World::from_json(&format!(
            r#"{{"bounds":{{"xmin":-10,"ymin":-10,"xmax":10,"ymax":10}},
                "objects":[{objects}], "robot":{{"x":0,"y":0,"heading":0}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn distance_lines() {
        let ctx = ToolContext::new(Bus::new(), "t").with_observer(StaticObservation::new(
            chair_world(r#"{"id":"c1","label":"chair","x":3,"y":4,"hx":0.2,"hy":0.2,"height":1}"#),
        ));
        let reg = registry_of(&["get_distance_to_objects"]).unwrap();
        let o = run(
            &reg,
            &ctx,
            "get_distance_to_objects",
            json!({"object_names": ["chair"]}),
        );
        assert_eq!(o.text(), "chair: distance=5.00 bearing=53.1");
        let o = run(
            &reg,
            &ctx,
            "get_distance_to_objects",
            json!({"object_names": ["ghost"]}),
        );
        assert_eq!(o.text(), "ghost: not visible");
    }

    #[test]
    fn nearer_chair_first_and_three_lines() {
        let ctx =
            ToolContext::new(Bus::new(), "t").with_observer(StaticObservation::new(chair_world(
                r#"{"id":"c1","label":"chair","x":2,"y":0.5,"hx":0.2,"hy":0.2,"height":1},
               {"id":"c2","label":"chair","x":1,"y":-0.5,"hx":0.2,"hy":0.2,"height":1},
               {"id":"t","label":"table","x":4,"y":2,"hx":0.3,"hy":0.3,"height":1}"#,
            )));
        let reg = registry_of(&["get_distance_to_objects"]).unwrap();
        let o = run(
            &reg,
            &ctx,
            "get_distance_to_objects",
            json!({"object_names": ["chair", "table"]}),
        );
        let text = o.text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let d: Vec<f64> = lines
            .iter()
            .map(|l| l.split("distance=").nth(1).unwrap()[..4].parse().unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(lines[0].starts_with("chair: distance=1.12"));
    }

    #[test]
    fn no_observer_is_error() {
        let ctx = ToolContext::new(Bus::new(), "t");
        let reg = registry_of(&["get_distance_to_objects", "query_identity"]).unwrap();
        let o = run(
            &reg,
            &ctx,
            "get_distance_to_objects",
            json!({"object_names": []}),
        );
        assert_eq!(o.status, OutcomeStatus::Error);
        let o = run(&reg, &ctx, "query_identity", json!({"question": "x"}));
        assert_eq!(o.text(), "no identity loaded");
    }

    #[tokio::test(start_paused = true)]
    async fn action_tools() {
        let bus = Bus::new();
        let _r = bus
            .register_action_server(
                "nav/goto",
                FnActionServer::new(
                    |_| true,
                    |_, ctx| {
                        async move {
                            for i in 0..100 {
                                if ctx.cancel_requested() {
                                    return ActionOutcome::canceled(json!({}));
                                }
                                ctx.feedback(json!({"distance_remaining": 10.0 - i as f64 * 0.5}));
                                tokio::time::sleep(Duration::from_millis(100)).await;
                            }
                            ActionOutcome::succeeded(json!({}))
                        }
                        .boxed()
                    },
                ),
            )
            .unwrap();
        let ctx = ToolContext::new(bus, "t");
        let reg = registry_of(&["start_action", "get_action_status", "cancel_action"]).unwrap();
        let o = execute(
            &ToolCall::new(
                "1",
                "start_action",
                json!({"name": "nav/goto", "goal": "{\"x\":1,\"y\":2}"}),
            ),
            &reg,
            &ctx,
        )
        .await;
        let id = o
            .text()
            .strip_prefix("accepted, goal_id=")
            .unwrap()
            .to_string();
        tokio::time::sleep(Duration::from_millis(250)).await;
        let o = execute(
            &ToolCall::new("2", "get_action_status", json!({"goal_id": id})),
            &reg,
            &ctx,
        )
        .await;
        assert_eq!(
            o.text(),
            r#"status=EXECUTING feedback={"distance_remaining":9.0}"#
        );
        let o = execute(
            &ToolCall::new("3", "cancel_action", json!({"goal_id": id})),
            &reg,
            &ctx,
        )
        .await;
        assert_eq!(o.text(), "CANCELED");
        let o = execute(
            &ToolCall::new("4", "get_action_status", json!({"goal_id": id})),
            &reg,
            &ctx,
        )
        .await;
        assert!(o.text().starts_with("status=CANCELED"));
        assert_eq!(ctx.goals()[0].status(), ActionStatus::Canceled);
        let o = execute(
            &ToolCall::new(
                "5",
                "get_action_status",
                json!({"goal_id": Uuid::nil().to_string()}),
            ),
            &reg,
            &ctx,
        )
        .await;
        assert_eq!(o.status, OutcomeStatus::Error);
    }

    #[tokio::test]
    async fn dispatch_publishes_pending_record() {
        let bus = Bus::new();
        let sub = bus.subscribe(MISSION_REQUESTS, 4).unwrap();
        let ctx = ToolContext::new(bus, "hri");
        let reg = registry_of(&["dispatch_mission"]).unwrap();
        let o = execute(
            &ToolCall::new(
                "1",
                "dispatch_mission",
                json!({"prompt": "Navigate to the chair"}),
            ),
            &reg,
            &ctx,
        )
        .await;
        assert_eq!(o.text(), "dispatched mission-1");
        let got = sub.drain();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload["prompt"], "Navigate to the chair");
        assert_eq!(got[0].payload["status"], "PENDING");
    }

    #[test]
    fn resolutions_record_decision() {
        let ctx = ToolContext::new(Bus::new(), "a");
        let reg = resolution_tools();
        assert_eq!(
            reg.names(),
            vec![
                "replan_route",
                "drive_forward",
                "flash_signal",
                "sound_signal",
                "abort_task"
            ]
        );
        let o = run(
            &reg,
            &ctx,
            "drive_forward",
            json!({"reason": "small branch"}),
        );
        assert_eq!(o.text(), "resolution drive_forward selected");
        let d = ctx.take_decision().unwrap();
        assert_eq!(
            (d.name.as_str(), d.reason.as_str()),
            ("drive_forward", "small branch")
        );
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(fixed(-0.04, 1), "0.0");
        assert_eq!(fixed(53.1301, 1), "53.1");
        assert_eq!(fixed(-12.25, 1), "-12.2");
    }
}
