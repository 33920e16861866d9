//! Embodied multi-agent runtime: a message bus with topics, services and
//! actions; LLM tools and providers; an embodiment store; ReAct and
//! state-machine agents; and a scenario runner over the simulated world.

pub mod agents;
pub mod llm;
pub mod msgbus;
pub mod scenario;
pub mod sim;
pub mod toolkit;
pub mod whoami;
