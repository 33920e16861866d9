//! Ground-truth task predicates for the tabletop scenarios.

use serde::{Deserialize, Serialize};

use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub pass: bool,
    pub diagnosis: String,
}

impl CheckResult {
    fn from_failures(failures: Vec<String>) -> Self {
        if failures.is_empty() {
            CheckResult {
                pass: true,
                diagnosis: "ok".into(),
            }
        } else {
            CheckResult {
                pass: false,
                diagnosis: failures.join("; "),
            }
        }
    }
}

/// Objects whose label contains `class` (case-insensitive) belong in `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub class: String,
    pub region: String,
}

pub fn check_sorted(world: &World, grouping: &[Grouping]) -> CheckResult {
    let mut failures = Vec::new();
    for g in grouping {
        let Some(region) = world.regions.get(&g.region) else {
            failures.push(format!("unknown region {}", g.region));
            continue;
        };
        let class = g.class.to_lowercase();
        let members = world
            .objects
            .iter()
            .chain(world.held.iter())
            .filter(|o| o.label.to_lowercase().contains(&class));
        for o in members {
            if world.held.as_ref().is_some_and(|h| h.id == o.id) {
                failures.push(format!("{} still held", o.id));
            } else if !region.contains(o.pose.position()) {
                failures.push(format!("{} not in {}", o.id, g.region));
            }
        }
    }
    CheckResult::from_failures(failures)
}

/// `order` lists the stack bottom-up.
pub fn check_stacked(world: &World, order: &[String]) -> CheckResult {
    let Some(base) = order.first() else {
        return CheckResult::from_failures(vec!["empty stack order".into()]);
    };
    match world.object(base) {
        None => {
            return CheckResult::from_failures(vec![format!(
                "level 0 expected {base} found nothing"
            )])
        }
        Some(o) if o.supported_by.is_some() => {
            return CheckResult::from_failures(vec![format!(
                "level 0 expected {base} on ground found it on {}",
                o.supported_by.as_deref().unwrap_or_default()
            )])
        }
        Some(_) => {}
    }
    for level in 1..order.len() {
        let below = &order[level - 1];
        let expected = &order[level];
        match world.resting_on(below) {
            Some(o) if &o.id == expected => {}
            Some(o) => {
                return CheckResult::from_failures(vec![format!(
                    "level {level} expected {expected} found {}",
                    o.id
                )])
            }
            None => {
                return CheckResult::from_failures(vec![format!(
                    "level {level} expected {expected} found nothing"
                )])
            }
        }
    }
    CheckResult::from_failures(Vec::new())
}

const SWAP_TOLERANCE: f64 = 0.1;

pub fn check_swapped(world: &World, pair: (&str, &str), initial: &World) -> CheckResult {
    let (a, b) = pair;
    let mut failures = Vec::new();
    for (mover, origin_of) in [(a, b), (b, a)] {
        let (Some(now), Some(then)) = (world.object(mover), initial.object(origin_of)) else {
            failures.push(format!("{mover} or {origin_of} missing"));
            continue;
        };
        if now.pose.position().distance(then.pose.position()) > SWAP_TOLERANCE {
            failures.push(format!("{mover} not at {origin_of}'s origin"));
        }
    }
    CheckResult::from_failures(failures)
}
