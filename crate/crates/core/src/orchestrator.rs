//! Session driver: builds station-agent pairs, runs the synchronized
//! 24-hour episode loop, schedules knowledge exchanges, and emits one
//! [`EpisodeRecord`] per episode.
//!
//! All randomness is drawn from per-(station, episode) streams, and per-pair
//! results are folded in station order, so the outcome is identical for any
//! worker count.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, Experience, QTable};
use crate::knowledge::{KnowledgeError, Repository};
use crate::metrics::{
    area_under_reward, jumpstart, station_success, transfer_ratio, transfer_ratio_raw,
    EpisodeRecord, MetricsError, SessionSummary,
};
use crate::rng::{stream, StreamDomain};
use crate::sim::{generate_flows, FlowSchedule, SimError, Station, StationConfig, HOURS_PER_EPISODE};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("initial knowledge action set does not match the session action set")]
    KnowledgeActionSetMismatch,
    #[error("unfair comparison: {0}")]
    UnfairComparison(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Full description of one training session.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub label: String,
    pub stations: usize,
    pub episodes: u64,
    pub master_seed: u64,
    /// Episodes between knowledge exchanges when transfer is enabled.
    pub deposit_interval: u64,
    pub transfer_enabled: bool,
    /// Trust coefficient for in-session downloads.
    pub trust: f64,
    /// Between-session knowledge: agents download from it before episode 0.
    pub initial_knowledge: Option<QTable>,
    pub station_configs: Vec<StationConfig>,
    pub agent_config: AgentConfig,
    /// Worker threads for the hour loop; 0 and 1 both mean serial. Never
    /// affects results.
    pub workers: usize,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.stations == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "station count must be >= 1".into(),
            ));
        }
        if self.episodes == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "episode count must be >= 1".into(),
            ));
        }
        if self.deposit_interval == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "deposit interval must be >= 1".into(),
            ));
        }
        if self.station_configs.len() != self.stations {
            return Err(OrchestratorError::InvalidConfig(format!(
                "expected {} station configs, got {}",
                self.stations,
                self.station_configs.len()
            )));
        }
        if !(self.trust >= 0.0 && self.trust.is_finite()) {
            return Err(OrchestratorError::InvalidConfig(format!(
                "trust must be finite and >= 0, got {}",
                self.trust
            )));
        }
        for config in &self.station_configs {
            config.validate()?;
        }
        let mut ids: Vec<u32> = self.station_configs.iter().map(|c| c.station_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(OrchestratorError::InvalidConfig(
                "station ids must be distinct (they key the random streams)".into(),
            ));
        }
        self.agent_config.validate()?;
        if let Some(knowledge) = &self.initial_knowledge {
            if knowledge.actions() != &self.agent_config.action_set {
                return Err(OrchestratorError::KnowledgeActionSetMismatch);
            }
        }
        Ok(())
    }
}

/// Outcome of a session: the full record stream plus the repository holding
/// the final distilled knowledge.
#[derive(Debug)]
pub struct SessionResult {
    pub summary: SessionSummary,
    pub final_knowledge: Repository,
    pub wall_clock: Duration,
}

/// Observable scheduling events, for tests that pin the hour-barrier order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    EpisodeStart { episode: u64 },
    HourStart { episode: u64, hour: u8 },
    StationStepped { episode: u64, hour: u8, station_id: u32 },
    KnowledgeExchange { episode: u64 },
}

pub trait TraceSink: Sync {
    fn record(&self, event: TraceEvent);
}

/// Trace sink that buffers every event, for assertions in tests.
#[derive(Debug, Default)]
pub struct CollectingTrace {
    events: Mutex<Vec<TraceEvent>>,
}

impl CollectingTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }
}

impl TraceSink for CollectingTrace {
    fn record(&self, event: TraceEvent) {
        self.events.lock().unwrap().push(event);
    }
}

struct Pair {
    station: Station,
    agent: Agent,
    rng: rand_chacha::ChaCha8Rng,
    episode_reward: f64,
    episode_moved: u64,
}

impl Pair {
    fn station_id(&self) -> u32 {
        self.station.config().station_id
    }

    fn begin_episode(&mut self, schedule: FlowSchedule, master_seed: u64, episode: u64) {
        self.station.reset(schedule);
        self.rng = stream(
            master_seed,
            self.station_id(),
            episode,
            StreamDomain::Exploration,
        );
        self.episode_reward = 0.0;
        self.episode_moved = 0;
    }

    fn step_hour(&mut self, epsilon: f64) -> Result<(), OrchestratorError> {
        let state = self.station.observe();
        let action = self.agent.choose_action(state, epsilon, &mut self.rng);
        let feedback = self.station.step(action)?;
        let next_state = if feedback.terminal {
            None
        } else {
            Some(self.station.observe())
        };
        self.agent.learn(&Experience {
            state,
            action,
            reward: feedback.reward,
            next_state,
        })?;
        self.episode_reward += feedback.reward;
        self.episode_moved += action.unsigned_abs();
        Ok(())
    }
}

pub fn run_session(config: &SessionConfig) -> Result<SessionResult, OrchestratorError> {
    run_session_with(config, |_| {}, None)
}

/// Run a session, invoking `on_record` for every finished episode so long
/// runs can stream their metrics out as they go.
pub fn run_session_with(
    config: &SessionConfig,
    mut on_record: impl FnMut(&EpisodeRecord),
    trace: Option<&dyn TraceSink>,
) -> Result<SessionResult, OrchestratorError> {
    config.validate()?;
    let started = Instant::now();

    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| OrchestratorError::InvalidConfig(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let first_schedules = generate_flows(&config.station_configs, config.master_seed, 0)?;
    let mut pairs: Vec<Pair> = config
        .station_configs
        .iter()
        .zip(first_schedules)
        .map(|(station_config, schedule)| {
            let agent = Agent::new(config.agent_config.clone())?;
            let rng = stream(
                config.master_seed,
                station_config.station_id,
                0,
                StreamDomain::Exploration,
            );
            Ok(Pair {
                station: Station::new(
                    station_config.clone(),
                    config.agent_config.action_set.clone(),
                    schedule,
                ),
                agent,
                rng,
                episode_reward: 0.0,
                episode_moved: 0,
            })
        })
        .collect::<Result<_, OrchestratorError>>()?;

    // Between-session transfer: fresh agents adopt the loaded table wholesale.
    if let Some(initial) = &config.initial_knowledge {
        for pair in &mut pairs {
            pair.agent.download(initial, 1.0)?;
        }
    }

    let mut repository = Repository::new();
    let mut records = Vec::with_capacity(config.episodes as usize);

    for episode in 0..config.episodes {
        let schedules = generate_flows(&config.station_configs, config.master_seed, episode)?;
        for (pair, schedule) in pairs.iter_mut().zip(schedules) {
            pair.begin_episode(schedule, config.master_seed, episode);
        }
        if let Some(sink) = trace {
            sink.record(TraceEvent::EpisodeStart { episode });
        }

        let epsilon = config.agent_config.epsilon_at(episode, config.episodes);
        for hour in 0..HOURS_PER_EPISODE as u8 {
            if let Some(sink) = trace {
                sink.record(TraceEvent::HourStart { episode, hour });
            }
            // Barrier semantics: every pair finishes this hour before any
            // pair sees the next one.
            let step_one = |pair: &mut Pair| -> Result<(), OrchestratorError> {
                pair.step_hour(epsilon)?;
                if let Some(sink) = trace {
                    sink.record(TraceEvent::StationStepped {
                        episode,
                        hour,
                        station_id: pair.station_id(),
                    });
                }
                Ok(())
            };
            match &pool {
                Some(pool) => {
                    pool.install(|| pairs.par_iter_mut().try_for_each(step_one))?;
                }
                None => pairs.iter_mut().try_for_each(step_one)?,
            }
        }

        let per_station_reward: Vec<f64> = pairs.iter().map(|p| p.episode_reward).collect();
        let per_station_success = pairs
            .iter()
            .map(|p| {
                station_success(
                    &p.station.state().post_action_history,
                    p.station.config().cap(),
                )
            })
            .collect::<Result<Vec<bool>, MetricsError>>()?;
        let record = EpisodeRecord {
            episode,
            total_reward: per_station_reward.iter().sum(),
            per_station_reward,
            per_station_success,
            bikes_moved: pairs.iter().map(|p| p.episode_moved).sum(),
        };
        on_record(&record);
        records.push(record);

        if config.transfer_enabled && (episode + 1) % config.deposit_interval == 0 {
            exchange_knowledge(&mut pairs, &mut repository, episode, config.trust)?;
            if let Some(sink) = trace {
                sink.record(TraceEvent::KnowledgeExchange { episode });
            }
        }
    }

    // Always distill at session end so every run yields exportable knowledge,
    // whether or not in-session transfer ran.
    for pair in &pairs {
        repository.deposit(pair.agent.upload(pair.station_id(), config.episodes - 1));
    }
    repository.distill()?;

    Ok(SessionResult {
        summary: SessionSummary::new(config.label.clone(), records)?,
        final_knowledge: repository,
        wall_clock: started.elapsed(),
    })
}

/// One atomic exchange at an episode boundary: all agents upload, the
/// repository distills, all agents download with the session trust.
fn exchange_knowledge(
    pairs: &mut [Pair],
    repository: &mut Repository,
    episode: u64,
    trust: f64,
) -> Result<(), OrchestratorError> {
    for pair in pairs.iter() {
        repository.deposit(pair.agent.upload(pair.station_id(), episode));
    }
    repository.distill()?;
    let master = repository.fetch()?.clone();
    for pair in pairs.iter_mut() {
        pair.agent.download(&master, trust)?;
    }
    Ok(())
}

/// Paired naive/experienced comparison on identical flow sequences.
#[derive(Debug)]
pub struct BenchmarkResult {
    pub transfer_ratio: f64,
    pub transfer_ratio_raw: f64,
    pub jumpstart: f64,
    pub naive: SessionResult,
    pub experienced: SessionResult,
}

/// Run both arms and compute R and the jumpstart over the first `first_n`
/// episodes. The configs must describe identical environments; only
/// knowledge and transfer settings may differ.
pub fn run_benchmark(
    naive_config: &SessionConfig,
    experienced_config: &SessionConfig,
    first_n: u64,
) -> Result<BenchmarkResult, OrchestratorError> {
    ensure_fair(naive_config, experienced_config)?;
    let naive = run_session(naive_config)?;
    let experienced = run_session(experienced_config)?;
    let area_without = area_under_reward(&naive.summary)?;
    let area_with = area_under_reward(&experienced.summary)?;
    Ok(BenchmarkResult {
        transfer_ratio: transfer_ratio(area_with, area_without)?,
        transfer_ratio_raw: transfer_ratio_raw(area_with, area_without)?,
        jumpstart: jumpstart(&naive.summary, &experienced.summary, first_n)?,
        naive,
        experienced,
    })
}

fn ensure_fair(a: &SessionConfig, b: &SessionConfig) -> Result<(), OrchestratorError> {
    let mismatch = |what: &str| Err(OrchestratorError::UnfairComparison(format!("{what} differ")));
    if a.stations != b.stations {
        return mismatch("station counts");
    }
    if a.episodes != b.episodes {
        return mismatch("episode counts");
    }
    if a.master_seed != b.master_seed {
        return mismatch("master seeds");
    }
    if a.station_configs != b.station_configs {
        return mismatch("station configs");
    }
    if a.agent_config != b.agent_config {
        return mismatch("agent configs");
    }
    Ok(())
}

/// One greedy (epsilon = 0) episode under a frozen table. Returns the
/// undiscounted episode reward and the action sequence.
pub fn greedy_rollout(
    station_config: &StationConfig,
    table: &QTable,
    master_seed: u64,
    episode: u64,
) -> Result<(f64, Vec<i64>), OrchestratorError> {
    let schedule = generate_flows(std::slice::from_ref(station_config), master_seed, episode)?
        .into_iter()
        .next()
        .unwrap();
    let mut station = Station::new(
        station_config.clone(),
        table.actions().clone(),
        schedule,
    );
    let mut total = 0.0;
    let mut actions = Vec::with_capacity(HOURS_PER_EPISODE);
    while !station.is_done() {
        let action = table.best_action(station.observe());
        actions.push(action);
        total += station.step(action)?.reward;
    }
    Ok((total, actions))
}
