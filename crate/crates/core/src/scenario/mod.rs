//! Scenario execution: load a scenario file, wire world, identity and agents
//! onto one bus, drive the tick clock, record a transcript and judge it.

pub mod checkers;
pub mod config;
pub mod runner;
pub mod transcript;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkers::{evaluate_transcript, CheckerResult, RunEnd};
pub use config::{AgentKind, AgentSpec, CheckerSpec, ScenarioConfig, ScenarioFile};
pub use runner::{run_blocking, run_scenario, RunOptions};
pub use transcript::{read_jsonl, to_jsonl, write_jsonl, TranscriptEvent, TranscriptLog};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Passed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub outcome: Outcome,
    pub checkers: Vec<CheckerResult>,
    pub transcript: Option<PathBuf>,
    pub ticks: u64,
    pub hashes: BTreeMap<u64, String>,
    #[serde(skip)]
    pub events: Vec<TranscriptEvent>,
}

impl RunReport {
    /// 0 when every checker passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.outcome {
            Outcome::Passed => 0,
            Outcome::Failed => 1,
        }
    }

    /// One line per checker, then the outcome.
    pub fn render(&self) -> String {
        let mut out = format!("scenario {}: {} ticks\n", self.name, self.ticks);
        for c in &self.checkers {
            let mark = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("  {mark} {}: {}\n", c.name, c.diagnosis));
        }
        let word = match self.outcome {
            Outcome::Passed => "PASSED",
            Outcome::Failed => "FAILED",
        };
        out.push_str(&format!("outcome {word}\n"));
        out
    }
}

/// Outcome of a list of checker results.
pub fn outcome_of(results: &[CheckerResult]) -> Outcome {
    if results.iter().all(|c| c.pass) {
        Outcome::Passed
    } else {
        Outcome::Failed
    }
}
