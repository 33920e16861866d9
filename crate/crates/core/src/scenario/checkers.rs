//! Checker verdicts computed from a transcript alone, so a saved transcript
//! can be re-judged offline.

use std::collections::BTreeMap;

use rai_simworld::geometry::segment_box_distance;
use rai_simworld::{
    check_sorted, check_stacked, check_swapped, Resolution, Tractor, Vec2, World, WorldEvent,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::CheckerSpec;
use super::transcript::TranscriptEvent;
use crate::agents::mission::{HRI_OUT, MISSION_STATUS};
use crate::agents::orchard::ANOMALY_RESOLUTIONS;
use crate::agents::{MissionRecord, MissionStatus};
use crate::llm::ChatMessage;
use crate::sim::{AppliedResolution, ManipRecord};
use crate::toolkit::builtin::MISSION_REQUESTS;

pub const RUN_END: &str = "run_end";
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerResult {
    pub name: String,
    pub pass: bool,
    pub diagnosis: String,
}

/// Payload of the final transcript event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnd {
    pub name: String,
    pub ticks: u64,
    pub initial_world: World,
    pub final_world: World,
    pub tractor: Option<Tractor>,
    pub hashes: BTreeMap<u64, String>,
    pub checkers: Vec<CheckerSpec>,
}

pub struct Evidence<'a> {
    pub events: &'a [TranscriptEvent],
    pub end: RunEnd,
}

impl<'a> Evidence<'a> {
    pub fn from_events(events: &'a [TranscriptEvent]) -> Result<Self, String> {
        let last = events
            .iter()
            .rev()
            .find(|e| e.source == "runner" && e.kind == RUN_END)
            .ok_or("transcript has no run_end event")?;
        let end =
            serde_json::from_value(last.payload.clone()).map_err(|e| format!("run_end: {e}"))?;
        Ok(Self { events, end })
    }

    /// Bus messages on `topic`, with their transcript position.
    fn published(&self, topic: &str) -> Vec<(u64, &Value)> {
        self.events
            .iter()
            .filter(|e| e.source == "bus" && e.payload["topic"] == topic)
            .map(|e| (e.seq, &e.payload["payload"]))
            .collect()
    }

    fn traces(&self, kind: &str) -> Vec<&TranscriptEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.source != "bus")
            .collect()
    }

    fn manips(&self) -> Vec<ManipRecord> {
        self.events
            .iter()
            .filter(|e| e.source == "world" && e.kind == "manip")
            .filter_map(|e| serde_json::from_value(e.payload.clone()).ok())
            .collect()
    }

    fn resolutions(&self) -> Vec<AppliedResolution> {
        self.events
            .iter()
            .filter(|e| e.source == "world" && e.kind == "resolution")
            .filter_map(|e| serde_json::from_value(e.payload.clone()).ok())
            .collect()
    }
}

fn verdict(name: &str, failures: Vec<String>, ok: String) -> CheckerResult {
    CheckerResult {
        name: name.to_string(),
        pass: failures.is_empty(),
        diagnosis: if failures.is_empty() {
            ok
        } else {
            failures.join("; ")
        },
    }
}

fn has_image_part(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.contains_key("image_ref") || m.values().any(has_image_part),
        Value::Array(a) => a.iter().any(has_image_part),
        _ => false,
    }
}

/// Missions dispatched, with every record published for each.
fn missions(ev: &Evidence) -> BTreeMap<String, Vec<(u64, MissionRecord)>> {
    let mut out: BTreeMap<String, Vec<(u64, MissionRecord)>> = BTreeMap::new();
    for (_, v) in ev.published(MISSION_REQUESTS) {
        if let Ok(r) = serde_json::from_value::<MissionRecord>(v.clone()) {
            out.entry(r.mission_id.clone()).or_default();
        }
    }
    for (seq, v) in ev.published(MISSION_STATUS) {
        if let Ok(r) = serde_json::from_value::<MissionRecord>(v.clone()) {
            out.entry(r.mission_id.clone()).or_default().push((seq, r));
        }
    }
    out
}

fn check_mission(ev: &Evidence, expect: MissionStatus, tolerance: f64) -> CheckerResult {
    let all = missions(ev);
    let mut f = Vec::new();
    if all.is_empty() {
        f.push("no mission was dispatched".to_string());
    }
    for (id, recs) in &all {
        let terminal: Vec<&MissionRecord> = recs
            .iter()
            .map(|(_, r)| r)
            .filter(|r| r.status.is_terminal())
            .collect();
        if terminal.len() != 1 {
            f.push(format!("{id}: {} terminal records", terminal.len()));
            continue;
        }
        if let Some(r) = recs.iter().find(|(_, r)| !r.is_consistent()) {
            f.push(format!("{id}: inconsistent record {:?}", r.1));
        }
        if terminal[0].status != expect {
            f.push(format!(
                "{id}: ended {:?}, expected {expect:?} ({})",
                terminal[0].status, terminal[0].report
            ));
        }
    }
    if expect == MissionStatus::Succeeded && f.is_empty() {
        match ev.traces("verify").last() {
            None => f.push("no verification recorded".into()),
            Some(v) => {
                let a = &v.payload["approach"];
                let target = Vec2::new(
                    a["x"].as_f64().unwrap_or(f64::NAN),
                    a["y"].as_f64().unwrap_or(f64::NAN),
                );
                let d = ev.end.final_world.robot.pose.position().distance(target);
                if d.is_nan() || d > tolerance + EPS {
                    f.push(format!("final robot-target distance {d:.3} > {tolerance}"));
                }
            }
        }
    }
    verdict(
        "mission",
        f,
        format!("{} mission(s) ended {expect:?}", all.len()),
    )
}

fn check_hri(ev: &Evidence, max_iterations: u64, during_mission: bool) -> CheckerResult {
    let ops: Vec<&TranscriptEvent> = ev
        .events
        .iter()
        .filter(|e| e.source == "operator" && e.kind == "message")
        .collect();
    let turns = ev.traces("turn");
    let replies = ev.published(HRI_OUT);
    let windows: Vec<(u64, u64)> = missions(ev)
        .values()
        .filter_map(|recs| {
            let start = recs
                .iter()
                .find(|(_, r)| r.status == MissionStatus::Executing)?
                .0;
            let end = recs.iter().find(|(_, r)| r.status.is_terminal())?.0;
            Some((start, end))
        })
        .collect();
    let mut f = Vec::new();
    let mut overlapped = 0;
    if ops.is_empty() {
        f.push("no operator messages".to_string());
    }
    for op in &ops {
        let id = op.payload["id"].as_str().unwrap_or_default();
        let Some(turn) = turns.iter().find(|t| t.payload["request"] == id) else {
            f.push(format!("message {id} was never handled"));
            continue;
        };
        let Some((reply_seq, _)) = replies.iter().find(|(_, p)| p["in_reply_to"] == id) else {
            f.push(format!("message {id} got no reply"));
            continue;
        };
        let at = op.payload["hri_iteration"].as_u64().unwrap_or(0);
        let took = turn.payload["iteration"]
            .as_u64()
            .unwrap_or(u64::MAX)
            .saturating_sub(at);
        if took > max_iterations {
            f.push(format!("message {id} answered after {took} iterations"));
        }
        if windows.iter().any(|(s, e)| s < reply_seq && reply_seq < e) {
            overlapped += 1;
        }
    }
    if during_mission && overlapped == 0 {
        f.push("no reply was sent while a mission was executing".into());
    }
    verdict(
        "hri_responsive",
        f,
        format!(
            "{} message(s) answered, {overlapped} during a mission",
            ops.len()
        ),
    )
}

fn check_detours(ev: &Evidence, min: f64) -> CheckerResult {
    let replans: Vec<AppliedResolution> = ev
        .resolutions()
        .into_iter()
        .filter(|r| r.effect.resolution == Resolution::ReplanRoute)
        .collect();
    let mut f = Vec::new();
    if replans.is_empty() {
        f.push("no replan_route was applied".to_string());
    }
    let mut worst = f64::INFINITY;
    for r in &replans {
        let (Some(ob), Some(next)) = (&r.obstacle, r.next_waypoint) else {
            f.push(format!(
                "anomaly {}: detour not applied ({})",
                r.anomaly_id, r.effect.note
            ));
            continue;
        };
        if !r.effect.resumed {
            f.push(format!("anomaly {}: tractor did not resume", r.anomaly_id));
        }
        let mut pts = vec![r.from];
        pts.extend(r.effect.detour.iter().copied());
        pts.push(next);
        for w in pts.windows(2) {
            let d = segment_box_distance(w[0], w[1], ob);
            worst = worst.min(d);
            if d < min - EPS {
                f.push(format!(
                    "anomaly {}: segment ({:.2},{:.2})-({:.2},{:.2}) passes {d:.3} from the obstacle",
                    r.anomaly_id, w[0].x, w[0].y, w[1].x, w[1].y
                ));
            }
        }
    }
    verdict(
        "detour_clearance",
        f,
        format!("minimum clearance {worst:.3}"),
    )
}

fn check_image_parts(ev: &Evidence, count: usize) -> CheckerResult {
    let convs = ev.traces("conversation");
    let mut f = Vec::new();
    if convs.is_empty() {
        f.push("no anomaly conversation recorded".to_string());
    }
    for c in &convs {
        let msgs: Vec<ChatMessage> =
            serde_json::from_value(c.payload["messages"].clone()).unwrap_or_default();
        let n: usize = msgs.iter().map(|m| m.image_refs().len()).sum();
        if n != count {
            f.push(format!(
                "anomaly {}: {n} image parts",
                c.payload["anomaly_id"]
            ));
        }
    }
    if count == 0 && ev.events.iter().any(|e| has_image_part(&e.payload)) {
        f.push("transcript contains an image part".into());
    }
    verdict(
        "image_parts",
        f,
        format!("{} conversation(s) with {count} image part(s)", convs.len()),
    )
}

pub fn evaluate(spec: &CheckerSpec, ev: &Evidence) -> CheckerResult {
    let end = &ev.end;
    let from_check = |name: &str, r: rai_simworld::CheckResult| CheckerResult {
        name: name.to_string(),
        pass: r.pass,
        diagnosis: r.diagnosis,
    };
    match spec {
        CheckerSpec::Mission { expect, tolerance } => check_mission(ev, *expect, *tolerance),
        CheckerSpec::HriResponsive {
            max_iterations,
            during_mission,
        } => check_hri(ev, *max_iterations, *during_mission),
        CheckerSpec::Sorted { grouping } => {
            from_check("sorted", check_sorted(&end.final_world, grouping))
        }
        CheckerSpec::Stacked { order } => {
            from_check("stacked", check_stacked(&end.final_world, order))
        }
        CheckerSpec::Swapped { pair } => from_check(
            "swapped",
            check_swapped(&end.final_world, (&pair[0], &pair[1]), &end.initial_world),
        ),
        CheckerSpec::ManipError { code } => {
            let m = ev.manips();
            let hit = m.iter().find(|r| r.code.as_deref() == Some(code.as_str()));
            CheckerResult {
                name: "manip_error".into(),
                pass: hit.is_some(),
                diagnosis: match hit {
                    Some(r) => format!("tick {}: {}", r.tick, r.message),
                    None => format!("no {code} among {} manipulation(s)", m.len()),
                },
            }
        }
        CheckerSpec::NoManipErrors => {
            let m = ev.manips();
            let bad: Vec<String> = m
                .iter()
                .filter(|r| !r.ok)
                .map(|r| r.message.clone())
                .collect();
            verdict(
                "no_manip_errors",
                bad,
                format!("{} manipulation(s) succeeded", m.len()),
            )
        }
        CheckerSpec::RouteComplete => {
            let f = match &end.tractor {
                None => vec!["no tractor in this scenario".to_string()],
                Some(t) if !t.route_complete() => vec![format!("tractor ended in {:?}", t.state)],
                Some(_) => vec![],
            };
            verdict("route_complete", f, "every waypoint reached".into())
        }
        CheckerSpec::SafetyViolations { count } => {
            let n = end
                .final_world
                .events
                .iter()
                .filter(|e| matches!(e, WorldEvent::SafetyViolation { .. }))
                .count();
            let f = if n == *count {
                vec![]
            } else {
                vec![format!("{n} safety violation(s), expected {count}")]
            };
            verdict("safety_violations", f, format!("{n} safety violation(s)"))
        }
        CheckerSpec::DetourClearance { min } => check_detours(ev, *min),
        CheckerSpec::Resolution { expect } => {
            let chosen: Vec<Value> = ev
                .published(ANOMALY_RESOLUTIONS)
                .into_iter()
                .map(|(_, v)| v.clone())
                .collect();
            let mut f = Vec::new();
            if chosen.is_empty() {
                f.push("no anomaly was resolved".to_string());
            }
            for c in &chosen {
                if c["resolution"] != expect.name() {
                    f.push(format!(
                        "anomaly {} resolved with {}",
                        c["anomaly_id"], c["resolution"]
                    ));
                }
            }
            let why = chosen
                .iter()
                .map(|c| c["reason"].as_str().unwrap_or("").to_string())
                .collect::<Vec<_>>()
                .join("; ");
            verdict("resolution", f, format!("{}: {why}", expect.name()))
        }
        CheckerSpec::ImageParts { count } => check_image_parts(ev, *count),
    }
}

/// Every agent loop ended without an error.
fn check_agents(ev: &Evidence) -> CheckerResult {
    let f = ev
        .events
        .iter()
        .filter(|e| e.kind == "agent_exit" || e.kind == "agent_hung")
        .filter_map(|e| match e.payload["error"].as_str() {
            Some(err) => Some(format!("{}: {err}", e.source)),
            None if e.kind == "agent_hung" => Some("an agent did not stop".into()),
            None => None,
        })
        .collect();
    verdict("agents", f, "every agent exited cleanly".into())
}

/// Evaluates the checkers recorded in the transcript, plus the implicit
/// `agents` check.
pub fn evaluate_transcript(events: &[TranscriptEvent]) -> Result<Vec<CheckerResult>, String> {
    let ev = Evidence::from_events(events)?;
    let mut out: Vec<CheckerResult> = ev.end.checkers.iter().map(|c| evaluate(c, &ev)).collect();
    out.push(check_agents(&ev));
    Ok(out)
}
