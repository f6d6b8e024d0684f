//! Distributed tabular Q-learning for bike-station rebalancing.
//!
//! A network of independent station-agent pairs learns to keep hourly bike
//! stock inside [0, floor(initial_stock * threshold)] at minimum movement
//! cost. Agents share what they learned through a knowledge repository that
//! pools their Q-tables into one distilled table, redistributed in-session
//! and persistable across sessions.
//!
//! Module map:
//! - [`sim`]: the station environment (flows, stepping, rewards).
//! - [`agent`]: sparse Q-tables, epsilon-greedy control, transfer hooks.
//! - [`knowledge`]: the repository, distillation, and the knowledge file format.
//! - [`metrics`]: benchmark quantities and a planning oracle.
//! - [`orchestrator`]: the synchronized session loop and paired benchmarks.

pub mod actions;
pub mod agent;
pub mod knowledge;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod sim;

pub use actions::ActionSet;
pub use agent::{Agent, AgentConfig, LearningRate, QTable};
pub use knowledge::{KnowledgePacket, Repository};
pub use metrics::{EpisodeRecord, SessionSummary};
pub use orchestrator::{run_benchmark, run_session, SessionConfig, SessionResult};
pub use sim::{FlowMode, Station, StationConfig, StockState};
