//! Criterion checks shared by the acceptance report and the focused tests.
//! Each returns `Ok(summary)` or `Err(reason)`.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::FutureExt;
use parking_lot::Mutex;
use rai_core::agents::{
    run_agent, Agent, AgentHandle, AgentState, AnomalyAgent, ControlAgent, HriAgent, LoopStatus,
    ReactConfig, TaskAgent,
};
use rai_core::llm::Embedder;
use rai_core::llm::{ChatMessage, HashEmbedder, ScriptEntry, ScriptedProvider};
use rai_core::msgbus::{
    decode_envelope, encode_envelope, ActionOutcome, ActionStatus, Bus, Envelope, FnActionServer,
    Kind, WIRE_VERSION,
};
use rai_core::scenario::{run_blocking, RunOptions, RunReport, ScenarioConfig, TranscriptEvent};
use rai_core::toolkit::builtin::registry_of;
use rai_core::toolkit::ToolContext;
use rai_core::whoami::EmbodimentCondition;
use rai_core::whoami::{ingest, SourceDocument};
use rai_simworld::geometry::segment_box_distance;
use rai_simworld::{Aabb, Vec2, World, WorldEvent};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use uuid::Uuid;

pub type Verdict = Result<String, String>;

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub const SHIPPED: [&str; 11] = [
    "nav",
    "sort",
    "stack",
    "swap",
    "swap_naive",
    "place_inside",
    "orchard_branch",
    "orchard_branch_visual",
    "orchard_rock",
    "orchard_crate",
    "orchard_exhausted",
];

pub fn run(name: &str) -> RunReport {
    let cfg = ScenarioConfig::load(&scenarios_dir().join(format!("{name}.json")))
        .expect("scenario loads");
    run_blocking(&cfg, RunOptions::default()).expect("scenario runs")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- bus

fn random_topic(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";
    let segs = rng.gen_range(1..=4);
    (0..segs)
        .map(|_| {
            let n = rng.gen_range(1..=8);
            (0..n)
                .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &[
        "a", "Z", "0", " ", "\"", "\\", "\n", "\t", "é", "日本", "🤖", "\u{0001}", "/",
    ];
    let n = rng.gen_range(0..12);
    (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect()
}

pub fn random_json(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let pick = if depth == 0 {
        rng.gen_range(0..5)
    } else {
        rng.gen_range(0..7)
    };
    match pick {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => json!(rng.gen_range(-1_000_000_000i64..1_000_000_000)),
        3 => {
            let x: f64 = rng.gen_range(-1e6..1e6) * 10f64.powi(rng.gen_range(-12..12));
            json!(x)
        }
        4 => Value::String(random_string(rng)),
        5 => Value::Array(
            (0..rng.gen_range(0..5))
                .map(|_| random_json(rng, depth - 1))
                .collect(),
        ),
        _ => {
            let mut m = Map::new();
            for _ in 0..rng.gen_range(0..5) {
                m.insert(random_string(rng), random_json(rng, depth - 1));
            }
            Value::Object(m)
        }
    }
}

pub fn random_envelope(rng: &mut ChaCha8Rng) -> Envelope {
    let kind = Kind::ALL[rng.gen_range(0..Kind::ALL.len())];
    Envelope {
        version: WIRE_VERSION,
        kind,
        id: Uuid::from_u128(rng.gen()),
        topic: random_topic(rng),
        corr: kind.is_reply().then(|| Uuid::from_u128(rng.gen())),
        ts: rng.gen_range(0..u64::MAX / 2),
        payload: random_json(rng, 3),
    }
}

pub fn envelope_roundtrips(n: usize, seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let e = random_envelope(&mut rng);
        let bytes = encode_envelope(&e);
        let back = decode_envelope(&bytes).map_err(|err| format!("envelope {i}: {err}"))?;
        ensure(back == e, || {
            format!("envelope {i} changed: {e:?} vs {back:?}")
        })?;
        ensure(encode_envelope(&back) == bytes, || {
            format!("envelope {i} re-encodes differently")
        })?;
    }
    Ok(format!("{n} envelopes round-tripped"))
}

/// `publishers` tasks publish interleaved, numbered messages on one topic.
pub fn publisher_fifo(total: usize, publishers: usize, seed: u64) -> Verdict {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async move {
        let bus = Bus::deterministic(seed);
        let sub = bus.subscribe("fifo/test", total + 1).unwrap();
        let per = total / publishers;
        let mut tasks = Vec::new();
        for p in 0..publishers {
            let bus = bus.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + p as u64);
            tasks.push(tokio::spawn(async move {
                for k in 0..per {
                    bus.publish("fifo/test", json!({"p": p, "k": k})).unwrap();
                    for _ in 0..rng.gen_range(0..3) {
                        tokio::task::yield_now().await;
                    }
                }
            }));
        }
        for t in tasks {
            t.await.unwrap();
        }
        let got = sub.drain();
        ensure(got.len() == per * publishers, || {
            format!("received {} of {}", got.len(), per * publishers)
        })?;
        let mut next = vec![0u64; publishers];
        let mut switches = 0;
        let mut last = None;
        for e in &got {
            let p = e.payload["p"].as_u64().unwrap() as usize;
            let k = e.payload["k"].as_u64().unwrap();
            ensure(k == next[p], || {
                format!("publisher {p}: got {k}, expected {}", next[p])
            })?;
            next[p] += 1;
            if last.is_some_and(|l| l != p) {
                switches += 1;
            }
            last = Some(p);
        }
        ensure(switches > publishers, || {
            "publishes were not interleaved".into()
        })?;
        Ok(format!(
            "{} publishes from {publishers} publishers in order ({switches} interleavings)",
            got.len()
        ))
    })
}

/// Goals with random durations, rejections and cancels in fake time; every
/// observed lifecycle must be a legal path with exactly one terminal status.
pub fn action_lifecycles(goals: usize, seed: u64) -> Verdict {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async move {
        let bus = Bus::deterministic(seed);
        let wire: Arc<Mutex<Vec<Envelope>>> = Arc::default();
        {
            let wire = wire.clone();
            bus.add_tap(Arc::new(move |e| wire.lock().push(e.clone())));
        }
        let server = FnActionServer::new(
            |g| g["steps"].as_u64().is_some_and(|s| s > 0),
            |g, ctx| {
                async move {
                    let steps = g["steps"].as_u64().unwrap();
                    let abort_at = g["abort_at"].as_u64();
                    for s in 0..steps {
                        tokio::select! {
                            biased;
                            _ = ctx.cancelled() => return ActionOutcome::canceled(json!({"at": s})),
                            _ = tokio::time::sleep(Duration::from_millis(100)) => {}
                        }
                        if abort_at == Some(s) {
                            return ActionOutcome::aborted(json!({"at": s}));
                        }
                        ctx.feedback(json!({"step": s}));
                    }
                    ActionOutcome::succeeded(json!({"steps": steps}))
                }
                .boxed()
            },
        );
        let _reg = bus.register_action_server("test/act", server).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut handles = Vec::new();
        let mut cancels = Vec::new();
        for _ in 0..goals {
            tokio::time::sleep(Duration::from_millis(rng.gen_range(0..60))).await;
            let steps = if rng.gen_bool(0.1) {
                0
            } else {
                rng.gen_range(1..20u64)
            };
            let abort_at = rng.gen_bool(0.15).then(|| rng.gen_range(0..steps.max(1)));
            let h = bus
                .send_goal("test/act", json!({"steps": steps, "abort_at": abort_at}))
                .unwrap();
            if rng.gen_bool(0.3) {
                let h2 = h.clone();
                let delay = rng.gen_range(0..2500);
                cancels.push(tokio::spawn(async move {
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                    let _ = h2.cancel().await;
                }));
            }
            handles.push(h);
        }
        for c in cancels {
            c.await.unwrap();
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for h in &handles {
            h.result().await;
        }
        let wire = wire.lock().clone();
        let mut results_on_wire: HashMap<Uuid, Vec<String>> = HashMap::new();
        for e in &wire {
            if e.kind == Kind::ActResult {
                results_on_wire
                    .entry(e.corr.unwrap())
                    .or_default()
                    .push(e.payload["status"].as_str().unwrap_or("").to_string());
            }
        }
        for h in &handles {
            let path = h.history();
            ensure(ActionStatus::is_legal_path(&path), || {
                format!("goal {}: illegal path {path:?}", h.id())
            })?;
            let last = *path.last().unwrap();
            *counts.entry(last.to_string()).or_default() += 1;
            let on_wire = results_on_wire.get(&h.id()).cloned().unwrap_or_default();
            if last == ActionStatus::Rejected {
                ensure(on_wire.is_empty(), || {
                    format!("rejected goal {} has a result frame", h.id())
                })?;
            } else {
                ensure(on_wire == [last.as_str()], || {
                    format!("goal {}: result frames {on_wire:?} vs {last}", h.id())
                })?;
            }
        }
        for s in [
            ActionStatus::Rejected,
            ActionStatus::Succeeded,
            ActionStatus::Aborted,
            ActionStatus::Canceled,
        ] {
            ensure(counts.get(&s.to_string()).copied().unwrap_or(0) > 0, || {
                format!("no goal ended {s}")
            })?;
        }
        Ok(format!("{goals} goals, terminal counts {counts:?}"))
    })
}

pub fn bus_conformance() -> Verdict {
    let t0 = Instant::now();
    let a = envelope_roundtrips(10_000, 11)?;
    let b = publisher_fifo(1000, 4, 12)?;
    let c = action_lifecycles(600, 13)?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{a}; {b}; {c}; {secs:.1} s"))
}

// ---------------------------------------------------------------- retrieval

const WORDS: &[&str] = &[
    "wheel", "camera", "lidar", "arm", "gripper", "battery", "motor", "tree", "row", "orchard",
    "chair", "table", "sensor", "range", "speed", "mower", "deck", "rock", "branch", "crate",
    "robot", "tractor", "route", "kitchen", "sofa", "plant", "laser", "depth", "map", "joint",
];

fn random_doc(rng: &mut ChaCha8Rng, i: usize) -> SourceDocument {
    let n = rng.gen_range(1..120);
    let body: Vec<&str> = (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect();
    SourceDocument::new(
        &format!("doc{:03}", rng.gen_range(0..1000) * 100 + i),
        "t",
        &body.join(" "),
    )
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Brute force over re-embedded chunk texts, sorted by score then (doc, seq).
fn oracle_top_k(
    store: &rai_core::whoami::ChunkStore,
    query: &str,
    k: usize,
) -> Vec<(String, usize, f64)> {
    let emb = HashEmbedder::default();
    let q = emb.embed_one(query);
    let mut all: Vec<(String, usize, f64)> = store
        .chunks()
        .iter()
        .map(|c| {
            (
                c.doc_id.clone(),
                c.seq,
                oracle_cosine(&q, &emb.embed_one(&c.text)),
            )
        })
        .collect();
    all.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    all.truncate(k);
    all
}

pub fn retrieval_exactness(stores: usize, seed: u64) -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = 0;
    let mut ties = 0;
    for s in 0..stores {
        let size = rng.gen_range(32..160);
        let overlap = rng.gen_range(0..size / 2);
        let docs: Vec<SourceDocument> = (0..rng.gen_range(1..40))
            .map(|i| random_doc(&mut rng, i))
            .collect();
        let store = ingest(&docs, size, overlap, Arc::new(HashEmbedder::default()))
            .map_err(|e| e.to_string())?;
        ensure(store.len() <= 1000, || {
            format!("store {s} has {} chunks", store.len())
        })?;
        let n = store.len();
        for _ in 0..3 {
            let q: Vec<&str> = (0..rng.gen_range(1..6))
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            let q = q.join(" ");
            for k in [1, 5, n + 10] {
                let got = store.query(&q, k).map_err(|e| e.to_string())?;
                let want = oracle_top_k(&store, &q, k);
                ensure(got.len() == want.len(), || {
                    format!(
                        "store {s} k={k}: {} results, want {}",
                        got.len(),
                        want.len()
                    )
                })?;
                for (i, ((c, score), (d, seq, w))) in got.iter().zip(&want).enumerate() {
                    ensure((score - w).abs() <= 1e-12, || {
                        format!("store {s} k={k} rank {i}: score {score} vs {w}")
                    })?;
                    ensure(&c.doc_id == d && c.seq == *seq, || {
                        format!(
                            "store {s} k={k} rank {i}: {}#{} vs {d}#{seq}",
                            c.doc_id, c.seq
                        )
                    })?;
                }
                ties += want.windows(2).filter(|w| w[0].2 == w[1].2).count();
                queries += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{stores} stores, {queries} queries, {ties} tied neighbours, {secs:.1} s"
    ))
}

// ---------------------------------------------------------------- scenarios

fn bus_payloads<'a>(events: &'a [TranscriptEvent], topic: &str) -> Vec<(u64, &'a Value)> {
    events
        .iter()
        .filter(|e| e.source == "bus" && e.payload["topic"] == topic)
        .map(|e| (e.seq, &e.payload["payload"]))
        .collect()
}

fn run_end(events: &[TranscriptEvent]) -> &Value {
    &events
        .iter()
        .rev()
        .find(|e| e.kind == "run_end")
        .expect("run_end")
        .payload
}

fn final_world(events: &[TranscriptEvent]) -> World {
    serde_json::from_value(run_end(events)["final_world"].clone()).expect("world")
}

pub fn navigation() -> Verdict {
    let a = run("nav");
    let b = run("nav");
    ensure(a.exit_code() == 0, || a.render())?;
    let ev = &a.events;
    ensure(
        rai_core::scenario::to_jsonl(ev) == rai_core::scenario::to_jsonl(&b.events),
        || "transcripts differ between runs".into(),
    )?;
    // exactly one terminal record, SUCCEEDED
    let statuses = bus_payloads(ev, "mission/status");
    let terminal: Vec<&(u64, &Value)> = statuses
        .iter()
        .filter(|(_, p)| {
            matches!(
                p["status"].as_str(),
                Some("SUCCEEDED" | "FAILED" | "CANCELED")
            )
        })
        .collect();
    ensure(terminal.len() == 1, || {
        format!("{} terminal records", terminal.len())
    })?;
    ensure(terminal[0].1["status"] == "SUCCEEDED", || {
        format!("mission ended {}", terminal[0].1)
    })?;
    // final distance from the robot to the target's approach point
    let world = final_world(ev);
    let plan = ev
        .iter()
        .find(|e| e.kind == "plan")
        .ok_or("no plan trace")?;
    let chair = world
        .object(plan.payload["object"].as_str().unwrap())
        .ok_or("target missing")?;
    let robot = world.robot.pose.position();
    let target = Vec2::new(
        plan.payload["approach"]["x"].as_f64().unwrap(),
        plan.payload["approach"]["y"].as_f64().unwrap(),
    );
    let d = robot.distance(target);
    ensure(d <= 0.25, || format!("robot ends {d:.3} from the target"))?;
    let to_chair = robot.distance(chair.pose.position());
    // interleaved question answered within one HRI iteration while executing
    let executing = statuses
        .iter()
        .find(|(_, p)| p["status"] == "EXECUTING")
        .ok_or("no EXECUTING record")?
        .0;
    let done = terminal[0].0;
    let ops: Vec<&TranscriptEvent> = ev.iter().filter(|e| e.source == "operator").collect();
    let mut answered_during = 0;
    for op in &ops {
        let id = op.payload["id"].as_str().unwrap();
        let turn = ev
            .iter()
            .find(|e| e.kind == "turn" && e.payload["request"] == id)
            .ok_or_else(|| format!("message {id} not handled"))?;
        let took = turn.payload["iteration"].as_u64().unwrap()
            - op.payload["hri_iteration"].as_u64().unwrap();
        ensure(took <= 1, || format!("message {id} took {took} iterations"))?;
        let reply = bus_payloads(ev, "hri/out")
            .into_iter()
            .find(|(_, p)| p["in_reply_to"] == id)
            .ok_or_else(|| format!("message {id} got no reply"))?;
        if executing < op.seq && reply.0 < done {
            answered_during += 1;
        }
    }
    ensure(answered_during >= 1, || {
        "no question answered while the mission executed".into()
    })?;
    Ok(format!(
        "SUCCEEDED once, robot {d:.3} from the approach point ({to_chair:.2} from the chair centre), {answered_during} answer(s) mid-mission, transcript replay identical ({} events)",
        ev.len()
    ))
}

fn manip_codes(events: &[TranscriptEvent]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.source == "world" && e.kind == "manip")
        .filter_map(|e| e.payload["code"].as_str().map(str::to_string))
        .collect()
}

pub fn manipulation() -> Verdict {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    for name in ["sort", "stack", "swap"] {
        let r = run(name);
        ensure(r.exit_code() == 0, || r.render())?;
        ensure(manip_codes(&r.events).is_empty(), || {
            format!("{name}: manipulation errors")
        })?;
        notes.push(format!("{name} passes"));
    }
    for name in ["swap_naive", "place_inside"] {
        let r = run(name);
        ensure(r.exit_code() == 1, || {
            format!("{name} exited {}", r.exit_code())
        })?;
        let codes = manip_codes(&r.events);
        ensure(codes == ["OVERLAP"], || format!("{name}: codes {codes:?}"))?;
        notes.push(format!("{name} fails with OVERLAP"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{}; {secs:.2} s", notes.join(", ")))
}

fn violations(world: &World) -> usize {
    world
        .events
        .iter()
        .filter(|e| matches!(e, WorldEvent::SafetyViolation { .. }))
        .count()
}

fn image_parts_in(events: &[TranscriptEvent]) -> Vec<usize> {
    events
        .iter()
        .filter(|e| e.kind == "conversation")
        .map(|e| {
            let msgs: Vec<ChatMessage> =
                serde_json::from_value(e.payload["messages"].clone()).unwrap();
            msgs.iter().map(|m| m.image_refs().len()).sum()
        })
        .collect()
}

pub fn orchard() -> Verdict {
    let mut notes = Vec::new();

    let branch = run("orchard_branch");
    ensure(branch.exit_code() == 0, || branch.render())?;
    let w = final_world(&branch.events);
    ensure(violations(&w) == 0, || "branch: safety violation".into())?;
    let tractor = &run_end(&branch.events)["tractor"];
    ensure(tractor["state"]["state"] == "completed", || {
        format!("branch: tractor {}", tractor["state"])
    })?;
    notes.push("branch: 0 violations, route complete".to_string());

    let rock = run("orchard_rock");
    let n = violations(&final_world(&rock.events));
    ensure(n == 1, || format!("rock: {n} violations"))?;
    notes.push("rock: 1 violation".into());

    let krate = run("orchard_crate");
    ensure(krate.exit_code() == 0, || krate.render())?;
    let mut min = f64::INFINITY;
    for e in krate
        .events
        .iter()
        .filter(|e| e.kind == "resolution" && e.source == "world")
    {
        let ob: Aabb =
            serde_json::from_value(e.payload["obstacle"].clone()).map_err(|e| e.to_string())?;
        let mut pts: Vec<Vec2> = vec![serde_json::from_value(e.payload["from"].clone()).unwrap()];
        pts.extend(
            serde_json::from_value::<Vec<Vec2>>(e.payload["effect"]["detour"].clone()).unwrap(),
        );
        pts.push(
            serde_json::from_value(e.payload["next_waypoint"].clone())
                .map_err(|e| e.to_string())?,
        );
        for s in pts.windows(2) {
            min = min.min(segment_box_distance(s[0], s[1], &ob));
        }
    }
    ensure(min >= 0.5 - 1e-9, || format!("crate: clearance {min}"))?;
    notes.push(format!("crate: clearance {min:.3}"));

    let ex = run("orchard_exhausted");
    let res = bus_payloads(&ex.events, "anomaly/resolutions");
    ensure(
        res.len() == 1
            && res[0].1["resolution"] == "abort_task"
            && res[0].1["reason"]
                .as_str()
                .unwrap_or("")
                .starts_with("fail-safe"),
        || format!("exhausted: {res:?}"),
    )?;
    notes.push("exhaustion: abort_task fail-safe".into());

    let lang = image_parts_in(&branch.events);
    let any_image = rai_core::scenario::to_jsonl(&branch.events).contains("image_ref");
    let vis = image_parts_in(&run("orchard_branch_visual").events);
    ensure(lang == [0] && !any_image, || {
        format!("language-only image parts {lang:?}")
    })?;
    ensure(vis == [1], || format!("visual image parts {vis:?}"))?;
    notes.push("image parts 0 vs 1".into());
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- agents

pub fn react_bound(max_steps: usize) -> Verdict {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async move {
        let script = (0..20)
            .map(|i| {
                ScriptEntry::call(
                    "publish_message",
                    json!({"topic": "x/y", "payload": format!("{i}")}),
                )
            })
            .collect();
        let provider = Arc::new(ScriptedProvider::new(script));
        let cfg = ReactConfig::new(provider.clone(), registry_of(&["publish_message"]).unwrap())
            .with_max_steps(max_steps);
        let ctx = ToolContext::new(Bus::new(), "adversary");
        let r = rai_core::agents::react_loop(
            &cfg,
            &ctx,
            cfg.conversation(ChatMessage::user("go")),
            None,
        )
        .await;
        ensure(r.status == LoopStatus::Failed, || {
            format!("status {:?}", r.status)
        })?;
        ensure(
            r.provider_calls <= max_steps && provider.calls() as usize == r.provider_calls,
            || format!("{} calls for max_steps {max_steps}", provider.calls()),
        )?;
        Ok(format!(
            "{} provider calls at max_steps {max_steps}",
            r.provider_calls
        ))
    })
}

/// Agent that sleeps one tick per iteration.
struct Sleeper;

impl Agent for Sleeper {
    fn step<'a>(
        &'a mut self,
        _h: &'a AgentHandle,
    ) -> futures::future::BoxFuture<'a, Result<rai_core::agents::Step, rai_core::agents::AgentError>>
    {
        async {
            tokio::time::sleep(Duration::from_millis(100)).await;
            Ok(rai_core::agents::Step::Continue)
        }
        .boxed()
    }
}

/// Stops every agent kind mid-run and checks each finishes within one more
/// iteration without the clock moving.
pub fn stop_halts_agents() -> Verdict {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async {
        let bus = Bus::deterministic(5);
        let ctx = |id: &str| Arc::new(ToolContext::new(bus.clone(), id));
        let slow = Arc::new(ScriptedProvider::new(vec![]));
        let cfg = || ReactConfig::new(slow.clone(), registry_of(&["publish_message"]).unwrap());
        let mut agents: Vec<(&str, Box<dyn Agent>)> = vec![
            ("hri", Box::new(HriAgent::new(cfg(), ctx("hri")).unwrap())),
            (
                "control",
                Box::new(ControlAgent::new(cfg(), ctx("control")).unwrap()),
            ),
            (
                "anomaly",
                Box::new(
                    AnomalyAgent::new(cfg(), ctx("anomaly"), EmbodimentCondition::LanguageOnly)
                        .unwrap(),
                ),
            ),
            ("sleeper", Box::new(Sleeper)),
        ];
        let task = TaskAgent::new(
            ReactConfig::new(
                Arc::new(ScriptedProvider::new(vec![ScriptEntry::text("ok")])),
                Default::default(),
            ),
            ctx("task"),
            "idle",
        );
        agents.push(("task", Box::new(task)));
        let mut handles = Vec::new();
        let mut joins = Vec::new();
        for (id, mut a) in agents {
            let h = AgentHandle::new(id);
            let h2 = h.clone();
            joins.push(tokio::spawn(
                async move { run_agent(a.as_mut(), &h2).await },
            ));
            handles.push(h);
        }
        tokio::time::sleep(Duration::from_millis(1050)).await;
        let before: Vec<u64> = handles.iter().map(AgentHandle::iterations).collect();
        let clock = tokio::time::Instant::now();
        for h in &handles {
            h.stop();
        }
        for j in joins {
            j.await.unwrap().map_err(|e| e.to_string())?;
        }
        let waited = clock.elapsed();
        for (h, b) in handles.iter().zip(&before) {
            ensure(h.state() == AgentState::Stopped, || {
                format!("{} is {:?}", h.id(), h.state())
            })?;
            ensure(h.iterations() <= b + 1, || {
                format!("{} ran {} more iterations", h.id(), h.iterations() - b)
            })?;
        }
        ensure(waited <= Duration::from_millis(100), || {
            format!("stopping took {waited:?} of fake time")
        })?;
        Ok(format!(
            "{} agents stopped within one iteration ({waited:?} fake time)",
            handles.len()
        ))
    })
}

pub fn agent_bounds() -> Verdict {
    let a = react_bound(16)?;
    let b = react_bound(5)?;
    let c = stop_halts_agents()?;
    Ok(format!("{a}; {b}; {c}"))
}

// ---------------------------------------------------------------- determinism

pub fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden_hashes.json")
}

/// Hashes at ticks 10, 100 (when reached) and the terminal tick, per scenario.
pub fn scenario_hashes(name: &str) -> BTreeMap<String, String> {
    let r = run(name);
    let terminal = r.ticks;
    r.hashes
        .iter()
        .filter(|(t, _)| **t == 10 || **t == 100 || **t == terminal)
        .map(|(t, h)| {
            let key = if *t == terminal {
                "terminal".to_string()
            } else {
                t.to_string()
            };
            (key, h.clone())
        })
        .collect()
}

pub fn world_determinism(runs: usize) -> Verdict {
    let text = std::fs::read_to_string(golden_path()).map_err(|e| format!("golden file: {e}"))?;
    let golden: BTreeMap<String, BTreeMap<String, String>> =
        serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for name in SHIPPED {
        let want = golden
            .get(name)
            .ok_or_else(|| format!("no golden hashes for {name}"))?;
        for i in 0..runs {
            let got = scenario_hashes(name);
            ensure(&got == want, || {
                format!("{name} run {i}: {got:?} vs golden {want:?}")
            })?;
        }
    }
    Ok(format!(
        "{} scenarios x {runs} runs match the golden hashes",
        SHIPPED.len()
    ))
}
