//! Builds a scenario on one bus and drives its clock.

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rai_simworld::Tractor;
use serde_json::{json, Value};

use super::checkers::{evaluate_transcript, RunEnd, RUN_END};
use super::config::{AgentKind, AgentSpec, ScenarioConfig};
use super::transcript::{write_jsonl, TranscriptLog};
use super::{outcome_of, RunReport, ScenarioError};
use crate::agents::mission::{HRI_IN, HRI_OUT, MISSION_STATUS};
use crate::agents::{
    run_agent, Agent, AgentHandle, AgentState, AnomalyAgent, ControlAgent, HriAgent, MissionRecord,
    ReactConfig, TaskAgent,
};
use crate::msgbus::{Bus, IdSource, SystemClock, DEFAULT_QUEUE_CAPACITY};
use crate::sim::{HostConfig, WorldHost, TICK};
use crate::toolkit::builtin::{registry_of, MISSION_REQUESTS};
use crate::toolkit::{BusDetector, ToolContext, Tracer};
use crate::whoami::{build_system_prompt, EmbodimentCondition, PromptOptions};

/// Ticks allowed for agents to wind down after stop.
const DRAIN_TICKS: u64 = 50;

type StartHook = Box<dyn FnOnce(&Bus) + Send>;

#[derive(Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub transcript: Option<PathBuf>,
    /// Wall-clock ticks instead of paused time.
    pub live: bool,
    /// Keep ticking until `max_ticks` even after the scenario is done.
    pub hold: bool,
    pub max_ticks: Option<u64>,
    /// Called with the bus once the world and agents are up.
    pub on_start: Option<StartHook>,
}

impl RunOptions {
    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn transcript(mut self, path: impl Into<PathBuf>) -> Self {
        self.transcript = Some(path.into());
        self
    }
}

/// Runs on a fresh single-threaded runtime: paused time unless `live`, or
/// whenever a live model is involved.
pub fn run_blocking(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunReport, ScenarioError> {
    let live = opts.live || cfg.uses_http();
    let mut b = tokio::runtime::Builder::new_current_thread();
    b.enable_all();
    if !live {
        b.start_paused(true);
    }
    let rt = b.build().map_err(|e| ScenarioError::Io(e.to_string()))?;
    rt.block_on(run_scenario(cfg, RunOptions { live, ..opts }))
}

fn default_tools(kind: AgentKind, has_identity: bool) -> Vec<&'static str> {
    match kind {
        AgentKind::Hri if has_identity => vec!["dispatch_mission", "query_identity"],
        AgentKind::Hri => vec!["dispatch_mission"],
        AgentKind::Control => vec!["get_distance_to_objects"],
        AgentKind::Manipulator => vec![
            "get_distance_to_objects",
            "pick_object",
            "place_object_at",
            "place_object_on",
        ],
        AgentKind::Anomaly => vec![],
    }
}

fn default_prompt(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Hri => "You are the conversational agent of a mobile robot. Answer the operator briefly. Hand physical tasks to the mission executor with dispatch_mission.",
        AgentKind::Control => "You plan navigation missions for a mobile robot.",
        AgentKind::Manipulator => "You control a robot arm over a tabletop. Use the tools to move objects; objects cannot overlap or be placed inside one another.",
        AgentKind::Anomaly => "You supervise an autonomous orchard tractor that has stopped in front of an obstacle.",
    }
}

fn build_agent(
    cfg: &ScenarioConfig,
    spec: &AgentSpec,
    bus: &Bus,
    tracer: &Tracer,
) -> Result<Box<dyn Agent>, ScenarioError> {
    let err = |e: String| ScenarioError::Config(format!("agent {}: {e}", spec.id));
    let names: Vec<&str> = match &spec.tools {
        Some(t) => t.iter().map(String::as_str).collect(),
        None => default_tools(spec.kind, cfg.bundle.is_some()),
    };
    let tools = registry_of(&names).map_err(err)?;
    let prompt = match (&spec.system_prompt, &cfg.bundle) {
        (Some(p), _) => p.clone(),
        (None, Some(b)) => build_system_prompt(
            b,
            PromptOptions {
                include_rules: spec.include_rules,
                include_body_descriptions: false,
            },
        ),
        (None, None) => default_prompt(spec.kind).to_string(),
    };
    let mut react = ReactConfig::new(cfg.provider_for(spec)?, tools).with_system_prompt(&prompt);
    if let Some(n) = spec.max_steps {
        react = react.with_max_steps(n);
    }
    let mut ctx = ToolContext::new(bus.clone(), &spec.id)
        .with_tracer(tracer.clone())
        .with_observer(BusDetector::new(bus.clone()));
    if let Some(b) = &cfg.bundle {
        ctx = ctx.with_identity(b.clone());
    }
    let ctx = Arc::new(ctx);
    let agent: Box<dyn Agent> = match spec.kind {
        AgentKind::Hri => Box::new(HriAgent::new(react, ctx).map_err(|e| err(e.to_string()))?),
        AgentKind::Control => {
            Box::new(ControlAgent::new(react, ctx).map_err(|e| err(e.to_string()))?)
        }
        AgentKind::Manipulator => Box::new(TaskAgent::new(
            react,
            ctx,
            spec.task.as_deref().unwrap_or_default(),
        )),
        AgentKind::Anomaly => {
            let cond = spec
                .condition
                .clone()
                .unwrap_or(EmbodimentCondition::LanguageOnly);
            Box::new(AnomalyAgent::new(react, ctx, cond).map_err(|e| err(e.to_string()))?)
        }
    };
    Ok(agent)
}

/// Progress counters the runner uses to decide the scenario is over.
struct Progress {
    requests: crate::msgbus::Subscription,
    statuses: crate::msgbus::Subscription,
    replies: crate::msgbus::Subscription,
    requested: BTreeSet<String>,
    finished: BTreeSet<String>,
    answered: usize,
}

impl Progress {
    fn new(bus: &Bus) -> Result<Self, ScenarioError> {
        let sub = |t| {
            bus.subscribe(t, DEFAULT_QUEUE_CAPACITY * 16)
                .map_err(|e| ScenarioError::Io(e.to_string()))
        };
        Ok(Self {
            requests: sub(MISSION_REQUESTS)?,
            statuses: sub(MISSION_STATUS)?,
            replies: sub(HRI_OUT)?,
            requested: BTreeSet::new(),
            finished: BTreeSet::new(),
            answered: 0,
        })
    }

    fn update(&mut self) {
        let rec = |v: &Value| serde_json::from_value::<MissionRecord>(v.clone()).ok();
        for e in self.requests.drain() {
            if let Some(r) = rec(&e.payload) {
                self.requested.insert(r.mission_id);
            }
        }
        for e in self.statuses.drain() {
            if let Some(r) = rec(&e.payload).filter(|r| r.status.is_terminal()) {
                self.finished.insert(r.mission_id);
            }
        }
        self.answered += self
            .replies
            .drain()
            .iter()
            .filter(|e| e.payload.get("in_reply_to").is_some())
            .count();
    }
}

pub async fn run_scenario(
    cfg: &ScenarioConfig,
    opts: RunOptions,
) -> Result<RunReport, ScenarioError> {
    let f = &cfg.file;
    let seed = opts.seed.unwrap_or(f.seed);
    let max_ticks = opts.max_ticks.unwrap_or(f.max_ticks);
    let bus = if opts.live {
        Bus::with_parts(Arc::new(SystemClock), IdSource::seeded(seed))
    } else {
        Bus::deterministic(seed)
    };
    let log = Arc::new(TranscriptLog::new());
    {
        let log = log.clone();
        bus.add_tap(Arc::new(move |env| {
            log.push("bus", env.kind.as_str(), env.to_value())
        }));
    }
    let tracer: Tracer = {
        let log = log.clone();
        Arc::new(move |source: &str, kind: &str, payload: &Value| {
            log.push(source, kind, payload.clone())
        })
    };
    log.push(
        "runner",
        "run_start",
        json!({"name": f.name, "seed": seed, "max_ticks": max_ticks, "live": opts.live}),
    );

    let mut world = cfg.world.clone();
    let tractor = match &f.orchard {
        None => None,
        Some(o) => {
            let route = world.routes[&o.route].clone();
            for ob in &o.obstacles {
                world.spawn_obstacle(ob.kind, &route, ob.segment, ob.fraction);
            }
            Some(Tractor::new(route))
        }
    };
    let initial_world = world.clone();
    let host = WorldHost::start(
        bus.clone(),
        world,
        tractor,
        HostConfig::default(),
        Some(tracer.clone()),
    )
    .map_err(|e| ScenarioError::Io(e.to_string()))?;
    let mut progress = Progress::new(&bus)?;

    let mut handles = Vec::new();
    let mut tasks = Vec::new();
    for spec in &f.agents {
        let mut agent = build_agent(cfg, spec, &bus, &tracer)?;
        let h = AgentHandle::new(&spec.id);
        let (h2, log) = (h.clone(), log.clone());
        tasks.push(tokio::spawn(async move {
            let r = run_agent(agent.as_mut(), &h2).await;
            log.push(
                h2.id(),
                "agent_exit",
                json!({"iterations": h2.iterations(), "error": r.err().map(|e| e.to_string())}),
            );
        }));
        handles.push((spec.kind, h));
    }
    if let Some(hook) = opts.on_start {
        hook(&bus);
    }

    let hri = handles
        .iter()
        .find(|(k, _)| *k == AgentKind::Hri)
        .map(|(_, h)| h.clone());
    let mut operator: VecDeque<_> = {
        let mut v = f.operator.clone();
        v.sort_by_key(|o| o.tick);
        v.into()
    };
    let expected_replies = if hri.is_some() { operator.len() } else { 0 };
    let mut settle: Option<u64> = None;
    loop {
        let t = host.tick_count();
        while operator.front().is_some_and(|o| o.tick <= t) {
            let line = operator.pop_front().expect("front exists");
            let it = hri.as_ref().map(AgentHandle::iterations).unwrap_or(0);
            let id = bus
                .publish(HRI_IN, json!({ "text": line.text }))
                .map_err(|e| ScenarioError::Io(e.to_string()))?;
            log.push(
                "operator",
                "message",
                json!({"id": id.to_string(), "text": line.text, "hri_iteration": it}),
            );
        }
        if t >= max_ticks || settle == Some(0) {
            break;
        }
        tokio::time::sleep(TICK).await;
        log.set_tick(t + 1);
        host.tick();
        progress.update();
        settle = match settle {
            Some(n) => Some(n - 1),
            None if !opts.hold => {
                let done = operator.is_empty()
                    && progress.answered >= expected_replies
                    && progress.requested.is_subset(&progress.finished)
                    && handles
                        .iter()
                        .filter(|(k, _)| *k == AgentKind::Manipulator)
                        .all(|(_, h)| h.state() == AgentState::Stopped)
                    && (f.orchard.is_none() || host.tractor_finished());
                done.then_some(f.settle_ticks)
            }
            None => None,
        };
    }

    for (_, h) in &handles {
        h.stop();
    }
    for _ in 0..DRAIN_TICKS {
        if handles
            .iter()
            .all(|(_, h)| h.state() == AgentState::Stopped)
        {
            break;
        }
        tokio::time::sleep(TICK).await;
        log.set_tick(host.tick_count() + 1);
        host.tick();
    }
    for task in tasks {
        if tokio::time::timeout(Duration::from_secs(1), task)
            .await
            .is_err()
        {
            log.push("runner", "agent_hung", json!({}));
        }
    }

    host.record_hash();
    let end = RunEnd {
        name: f.name.clone(),
        ticks: host.tick_count(),
        initial_world,
        final_world: host.world(),
        tractor: host.tractor(),
        hashes: host.hashes(),
        checkers: f.checkers.clone(),
    };
    log.push(
        "runner",
        RUN_END,
        serde_json::to_value(&end).expect("run_end serializes"),
    );
    let results = evaluate_transcript(&log.events()).map_err(ScenarioError::Io)?;
    for r in &results {
        log.push(
            "runner",
            "checker",
            serde_json::to_value(r).expect("result serializes"),
        );
    }
    let events = log.events();
    if let Some(p) = &opts.transcript {
        write_jsonl(p, &events).map_err(|e| ScenarioError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(RunReport {
        name: f.name.clone(),
        outcome: outcome_of(&results),
        checkers: results,
        transcript: opts.transcript,
        ticks: end.ticks,
        hashes: end.hashes,
        events,
    })
}
