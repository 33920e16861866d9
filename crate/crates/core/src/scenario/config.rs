//! Scenario files: JSON documents naming a world, an identity bundle, the
//! agent roster, the model provider and the checkers to evaluate.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rai_simworld::{Grouping, ObstacleKind, Resolution, World};
use serde::{Deserialize, Serialize};

use crate::agents::MissionStatus;
use crate::llm::{ChatProvider, HttpConfig, HttpProvider, ScriptedProvider};
use crate::whoami::{EmbodimentCondition, IdentityBundle};

use super::ScenarioError;

pub const DEFAULT_MAX_TICKS: u64 = 600;
pub const DEFAULT_SETTLE_TICKS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Hri,
    Control,
    Manipulator,
    Anomaly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: AgentKind,
    /// Scripted fixture; without one the scenario-level HTTP provider is used.
    #[serde(default)]
    pub script: Option<String>,
    #[serde(default)]
    pub tools: Option<Vec<String>>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub include_rules: bool,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Task text for a manipulator.
    #[serde(default)]
    pub task: Option<String>,
    /// Anomaly agents only.
    #[serde(default)]
    pub condition: Option<EmbodimentCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    Http {
        model: String,
        #[serde(default)]
        base_url: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorLine {
    pub tick: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub kind: ObstacleKind,
    pub segment: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchardSpec {
    pub route: String,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

fn default_tolerance() -> f64 {
    crate::agents::mission::SUCCESS_TOLERANCE
}

fn one() -> u64 {
    1
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckerSpec {
    /// Every dispatched mission ends exactly once with `expect`.
    Mission {
        expect: MissionStatus,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// Each operator message is answered within `max_iterations` HRI loop
    /// iterations; with `during_mission`, at least one answer lands while a
    /// mission is executing.
    HriResponsive {
        #[serde(default = "one")]
        max_iterations: u64,
        #[serde(default)]
        during_mission: bool,
    },
    Sorted {
        grouping: Vec<Grouping>,
    },
    Stacked {
        order: Vec<String>,
    },
    Swapped {
        pair: [String; 2],
    },
    /// At least one manipulation failed with `code`.
    ManipError {
        code: String,
    },
    NoManipErrors,
    RouteComplete,
    SafetyViolations {
        count: usize,
    },
    DetourClearance {
        #[serde(default = "half")]
        min: f64,
    },
    /// Every anomaly was resolved with `expect`.
    Resolution {
        expect: Resolution,
    },
    /// Every anomaly conversation carries exactly `count` image parts, and
    /// with zero no image part appears anywhere in the transcript.
    ImageParts {
        count: usize,
    },
}

impl CheckerSpec {
    pub fn name(&self) -> String {
        let v = serde_json::to_value(self).expect("spec serializes");
        v["check"].as_str().unwrap_or("?").to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub world: String,
    #[serde(default)]
    pub identity: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default = "default_settle")]
    pub settle_ticks: u64,
    #[serde(default)]
    pub provider: Option<ProviderSpec>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub operator: Vec<OperatorLine>,
    #[serde(default)]
    pub orchard: Option<OrchardSpec>,
    #[serde(default)]
    pub checkers: Vec<CheckerSpec>,
}

fn default_max_ticks() -> u64 {
    DEFAULT_MAX_TICKS
}

fn default_settle() -> u64 {
    DEFAULT_SETTLE_TICKS
}

/// A scenario with every referenced file loaded and checked.
#[derive(Clone)]
pub struct ScenarioConfig {
    pub file: ScenarioFile,
    pub dir: PathBuf,
    pub world: World,
    pub bundle: Option<Arc<IdentityBundle>>,
}

impl std::fmt::Debug for ScenarioConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioConfig")
            .field("name", &self.file.name)
            .field("dir", &self.dir)
            .finish()
    }
}

fn config_err(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, &dir)
    }

    /// Resolves `file` against `dir` and validates it.
    pub fn from_file(file: ScenarioFile, dir: &Path) -> Result<Self, ScenarioError> {
        let world_path = dir.join(&file.world);
        let text = std::fs::read_to_string(&world_path)
            .map_err(|e| config_err(format!("world file {}: {e}", world_path.display())))?;
        let world = World::from_json(&text)
            .map_err(|e| config_err(format!("world file {}: {e}", world_path.display())))?;
        let bundle = match &file.identity {
            None => None,
            Some(p) => {
                let p = dir.join(p);
                Some(Arc::new(IdentityBundle::load(&p).map_err(|e| {
                    config_err(format!("identity bundle {}: {e}", p.display()))
                })?))
            }
        };
        let cfg = Self {
            file,
            dir: dir.to_path_buf(),
            world,
            bundle,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let f = &self.file;
        let mut ids = BTreeSet::new();
        for a in &f.agents {
            if !ids.insert(a.id.as_str()) {
                return Err(config_err(format!("duplicate agent id {}", a.id)));
            }
            match &a.script {
                Some(s) => {
                    let p = self.dir.join(s);
                    if !p.is_file() {
                        return Err(config_err(format!("script {} not found", p.display())));
                    }
                }
                None if f.provider.is_none() => {
                    return Err(config_err(format!(
                        "agent {} has no script and the scenario has no provider",
                        a.id
                    )))
                }
                None => {}
            }
            if let Some(tools) = &a.tools {
                let names: Vec<&str> = tools.iter().map(String::as_str).collect();
                crate::toolkit::builtin::registry_of(&names)
                    .map_err(|e| config_err(format!("agent {}: {e}", a.id)))?;
            }
            if a.max_steps == Some(0) {
                return Err(config_err(format!(
                    "agent {}: max_steps must be at least 1",
                    a.id
                )));
            }
            match a.kind {
                AgentKind::Manipulator if a.task.is_none() => {
                    return Err(config_err(format!("manipulator {} needs a task", a.id)))
                }
                AgentKind::Anomaly => {
                    if let Some(EmbodimentCondition::Visual { asset }) = &a.condition {
                        let b = self.bundle.as_ref().ok_or_else(|| {
                            config_err(format!(
                                "agent {}: visual condition needs an identity bundle",
                                a.id
                            ))
                        })?;
                        b.attach_self_image(asset)
                            .map_err(|e| config_err(format!("agent {}: {e}", a.id)))?;
                    }
                }
                _ => {}
            }
            if a.include_rules && self.bundle.is_none() {
                return Err(config_err(format!(
                    "agent {}: include_rules needs an identity bundle",
                    a.id
                )));
            }
        }
        let has = |k| f.agents.iter().any(|a| a.kind == k);
        if has(AgentKind::Control) != has(AgentKind::Hri) {
            return Err(config_err("hri and control agents come in pairs"));
        }
        if has(AgentKind::Anomaly) && f.orchard.is_none() {
            return Err(config_err("anomaly agent without an orchard section"));
        }
        if let Some(o) = &f.orchard {
            let route = self
                .world
                .routes
                .get(&o.route)
                .ok_or_else(|| config_err(format!("unknown route {}", o.route)))?;
            for ob in &o.obstacles {
                if ob.segment + 1 >= route.len() || !(0.0..=1.0).contains(&ob.fraction) {
                    return Err(config_err(format!(
                        "obstacle {:?} is not on route {}",
                        ob.kind, o.route
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether any agent talks to a live model.
    pub fn uses_http(&self) -> bool {
        self.file.agents.iter().any(|a| a.script.is_none())
    }

    pub fn provider_for(&self, agent: &AgentSpec) -> Result<Arc<dyn ChatProvider>, ScenarioError> {
        if let Some(s) = &agent.script {
            let p = ScriptedProvider::from_file(&self.dir.join(s))
                .map_err(|e| config_err(e.to_string()))?;
            return Ok(Arc::new(p));
        }
        let Some(ProviderSpec::Http { model, base_url }) = &self.file.provider else {
            return Err(config_err(format!("agent {} has no provider", agent.id)));
        };
        let cfg = match base_url {
            Some(u) => HttpConfig {
                api_key: std::env::var(crate::llm::http::ENV_API_KEY).ok(),
                ..HttpConfig::new(u, model)
            },
            None => HttpConfig::from_env(model).map_err(config_err)?,
        };
        let mut p = HttpProvider::new(cfg).map_err(|e| config_err(e.to_string()))?;
        if let Some(b) = &self.bundle {
            let b = b.clone();
            p = p.with_images(Arc::new(move |id| b.image_bytes(id)));
        }
        Ok(Arc::new(p))
    }
}
