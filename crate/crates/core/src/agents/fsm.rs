//! State machine runner for StateBased agents. Each non-terminal state has an
//! entry action that returns an event; transitions are matched in declaration
//! order and the first match fires.

use std::collections::BTreeSet;
use std::sync::Arc;

use futures::future::BoxFuture;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type EntryAction<C> = Arc<dyn for<'a> Fn(&'a mut C) -> BoxFuture<'a, String> + Send + Sync>;
pub type EventPredicate = Arc<dyn Fn(&str) -> bool + Send + Sync>;

pub const DEFAULT_MAX_TRANSITIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsmError {
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("state {0:?} has no entry action")]
    MissingAction(String),
    #[error("no transition from {state} on event {event:?}")]
    NoTransition {
        state: String,
        event: String,
        path: Vec<String>,
    },
    #[error("more than {limit} transitions")]
    TooManyTransitions { limit: usize, path: Vec<String> },
}

impl FsmError {
    /// States visited before the failure, if any.
    pub fn path(&self) -> &[String] {
        match self {
            FsmError::NoTransition { path, .. } | FsmError::TooManyTransitions { path, .. } => path,
            _ => &[],
        }
    }
}

pub struct Transition {
    pub from: String,
    pub to: String,
    pub predicate: EventPredicate,
}

pub struct FsmDefinition<C> {
    states: IndexMap<String, Option<EntryAction<C>>>,
    transitions: Vec<Transition>,
    initial: String,
    terminal: BTreeSet<String>,
    pub max_transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmRun {
    pub terminal: String,
    pub path: Vec<String>,
    pub events: Vec<String>,
}

impl<C: Send> FsmDefinition<C> {
    pub fn new(initial: &str) -> Self {
        Self {
            states: IndexMap::new(),
            transitions: Vec::new(),
            initial: initial.to_string(),
            terminal: BTreeSet::new(),
            max_transitions: DEFAULT_MAX_TRANSITIONS,
        }
    }

    pub fn state<F>(mut self, name: &str, action: F) -> Self
    where
        F: for<'a> Fn(&'a mut C) -> BoxFuture<'a, String> + Send + Sync + 'static,
    {
        self.states.insert(name.to_string(), Some(Arc::new(action)));
        self
    }

    pub fn terminal(mut self, name: &str) -> Self {
        self.states.insert(name.to_string(), None);
        self.terminal.insert(name.to_string());
        self
    }

    /// Transition taken when the event equals `event`.
    pub fn on(self, from: &str, event: &str, to: &str) -> Self {
        let e = event.to_string();
        self.when(from, move |ev| ev == e, to)
    }

    /// Transition taken on any event.
    pub fn otherwise(self, from: &str, to: &str) -> Self {
        self.when(from, |_| true, to)
    }

    pub fn when(
        mut self,
        from: &str,
        pred: impl Fn(&str) -> bool + Send + Sync + 'static,
        to: &str,
    ) -> Self {
        self.transitions.push(Transition {
            from: from.to_string(),
            to: to.to_string(),
            predicate: Arc::new(pred),
        });
        self
    }

    pub fn initial(&self) -> &str {
        &self.initial
    }

    pub fn is_terminal(&self, state: &str) -> bool {
        self.terminal.contains(state)
    }

    pub fn validate(&self) -> Result<(), FsmError> {
        if !self.states.contains_key(&self.initial) {
            return Err(FsmError::UnknownState(self.initial.clone()));
        }
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !self.states.contains_key(s) {
                    return Err(FsmError::UnknownState(s.clone()));
                }
            }
        }
        for (name, action) in &self.states {
            if action.is_none() && !self.terminal.contains(name) {
                return Err(FsmError::MissingAction(name.clone()));
            }
        }
        Ok(())
    }

    /// Whether `path` starts at the initial state and every step is a declared edge.
    pub fn is_walk(&self, path: &[String]) -> bool {
        path.first() == Some(&self.initial)
            && path.windows(2).all(|w| {
                self.transitions
                    .iter()
                    .any(|t| t.from == w[0] && t.to == w[1])
            })
    }

    fn next(&self, from: &str, event: &str) -> Option<&str> {
        self.transitions
            .iter()
            .find(|t| t.from == from && (t.predicate)(event))
            .map(|t| t.to.as_str())
    }

    pub async fn run(&self, ctx: &mut C) -> Result<FsmRun, FsmError> {
        self.validate()?;
        let mut state = self.initial.clone();
        let mut path = vec![state.clone()];
        let mut events = Vec::new();
        while !self.terminal.contains(&state) {
            if events.len() >= self.max_transitions {
                return Err(FsmError::TooManyTransitions {
                    limit: self.max_transitions,
                    path,
                });
            }
            let action = self.states[&state].clone().expect("validated");
            let event = action(ctx).await;
            let Some(to) = self.next(&state, &event) else {
                return Err(FsmError::NoTransition { state, event, path });
            };
            state = to.to_string();
            path.push(state.clone());
            events.push(event);
        }
        Ok(FsmRun {
            terminal: state,
            path,
            events,
        })
    }
}
