//! Station environment: one simulated bike station over a 24-hour episode.
//!
//! The agent acts once per hour on the observed stock. The action applies
//! immediately, the reward is scored on the post-action stock, and the next
//! hour's exogenous flow lands afterwards. Stock is never clamped; negative
//! stock models unmet demand and is simply out of range.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::actions::ActionSet;
use crate::rng::{stream, StreamDomain};

/// Decision points per episode (hours 0..=23).
pub const HOURS_PER_EPISODE: usize = 24;
/// Flows connect consecutive decision hours, so there is one fewer.
pub const FLOWS_PER_EPISODE: usize = 23;
/// The last decision hour; its reward carries the terminal bonus/penalty.
pub const FINAL_HOUR: u8 = 23;

pub const FINAL_IN_RANGE_REWARD: f64 = 50.0;
pub const FINAL_OUT_OF_RANGE_PENALTY: f64 = -50.0;
pub const HOURLY_OUT_OF_RANGE_PENALTY: f64 = -30.0;
pub const COST_PER_BIKE_MOVED: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid station config: {0}")]
    InvalidConfig(String),
    #[error("deterministic flow mode requires a supplied schedule")]
    MissingSchedule,
    #[error("action {action} is not in the configured action set")]
    InvalidAction { action: i64 },
    #[error("episode already finished; reset before stepping again")]
    EpisodeOver,
    #[error("flow file line {line}: {message}")]
    FlowFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How hourly flows are produced for a station.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowMode {
    /// Uniform integer draws in [-flow_bound, +flow_bound], independent per station.
    Independent,
    /// Independent draws, then adjusted so the network-wide hourly sum stays small.
    Conserving,
    /// A caller-supplied fixed schedule, returned verbatim every episode.
    Deterministic { flows: Vec<i64> },
}

/// Static description of one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationConfig {
    pub station_id: u32,
    pub initial_stock: i64,
    /// Overstock multiplier; the in-range band is [0, floor(initial_stock * threshold)].
    pub threshold: f64,
    pub flow_mode: FlowMode,
    pub flow_bound: i64,
}

impl StationConfig {
    pub fn new(
        station_id: u32,
        initial_stock: i64,
        threshold: f64,
        flow_mode: FlowMode,
        flow_bound: i64,
    ) -> Result<Self, SimError> {
        let config = Self {
            station_id,
            initial_stock,
            threshold,
            flow_mode,
            flow_bound,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.initial_stock < 0 {
            return Err(SimError::InvalidConfig(format!(
                "initial_stock must be >= 0, got {}",
                self.initial_stock
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        if self.flow_bound < 0 {
            return Err(SimError::InvalidConfig(format!(
                "flow_bound must be >= 0, got {}",
                self.flow_bound
            )));
        }
        if let FlowMode::Deterministic { flows } = &self.flow_mode {
            if flows.is_empty() {
                return Err(SimError::MissingSchedule);
            }
            if flows.len() != FLOWS_PER_EPISODE {
                return Err(SimError::InvalidConfig(format!(
                    "deterministic schedule must have {} entries, got {}",
                    FLOWS_PER_EPISODE,
                    flows.len()
                )));
            }
            if let Some(f) = flows.iter().find(|f| f.abs() > self.flow_bound) {
                return Err(SimError::InvalidConfig(format!(
                    "deterministic flow {} exceeds flow_bound {}",
                    f, self.flow_bound
                )));
            }
        }
        Ok(())
    }

    /// Upper end of the in-range band, fixed for the whole episode.
    pub fn cap(&self) -> i64 {
        (self.initial_stock as f64 * self.threshold).floor() as i64
    }
}

/// Where a schedule came from; regenerating from the same lineage
/// reproduces the identical sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub station_id: u32,
    pub episode: u64,
}

/// The 23 hourly flows of one episode for one station.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSchedule {
    flows: Vec<i64>,
    lineage: SeedLineage,
}

impl FlowSchedule {
    pub fn flows(&self) -> &[i64] {
        &self.flows
    }

    pub fn lineage(&self) -> SeedLineage {
        self.lineage
    }
}

/// The agent-visible state: which hour it is and how many bikes are on hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StockState {
    pub hour: u8,
    pub stock: i64,
}

/// Mutable per-episode station state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationState {
    pub hour: u8,
    pub stock: i64,
    /// Stock after each completed hour's action, scored by the range check.
    pub post_action_history: Vec<i64>,
}

impl StationState {
    fn fresh(initial_stock: i64) -> Self {
        Self {
            hour: 0,
            stock: initial_stock,
            post_action_history: Vec::with_capacity(HOURS_PER_EPISODE),
        }
    }
}

/// Everything the environment reports back after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFeedback {
    pub old_stock: i64,
    pub action_applied: i64,
    /// Post-action, pre-next-flow stock; this is what the range check scores.
    pub new_stock: i64,
    pub reward: f64,
    pub in_range: bool,
    pub terminal: bool,
}

pub fn stock_in_range(stock: i64, cap: i64) -> bool {
    (0..=cap).contains(&stock)
}

/// Reward for one hour: -0.5 per bike moved, plus the range term
/// (+50/-50 at the final hour, -30 when out of range earlier, else 0).
/// Both range boundaries are inclusive.
pub fn reward_for_hour(post_action_stock: i64, hour: u8, action: i64, cap: i64) -> f64 {
    reward_on_horizon(post_action_stock, hour, FINAL_HOUR, action, cap)
}

/// Same schedule generalized to an arbitrary final hour, for short-horizon
/// planning checks.
pub(crate) fn reward_on_horizon(
    post_action_stock: i64,
    hour: u8,
    final_hour: u8,
    action: i64,
    cap: i64,
) -> f64 {
    let movement = -COST_PER_BIKE_MOVED * action.abs() as f64;
    let range = match (stock_in_range(post_action_stock, cap), hour == final_hour) {
        (true, true) => FINAL_IN_RANGE_REWARD,
        (false, true) => FINAL_OUT_OF_RANGE_PENALTY,
        (false, false) => HOURLY_OUT_OF_RANGE_PENALTY,
        (true, false) => 0.0,
    };
    movement + range
}

fn draw_station_flows(
    config: &StationConfig,
    master_seed: u64,
    episode: u64,
) -> Result<Vec<i64>, SimError> {
    match &config.flow_mode {
        FlowMode::Deterministic { flows } => Ok(flows.clone()),
        FlowMode::Independent | FlowMode::Conserving => {
            let bound = config.flow_bound;
            let mut rng = stream(master_seed, config.station_id, episode, StreamDomain::Flows);
            Ok((0..FLOWS_PER_EPISODE)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect())
        }
    }
}

/// Generate one episode's flow schedules for every station in the network.
///
/// Stations in conserving mode are adjusted as a group: per hour, the rounded
/// group mean is subtracted from each member (clamped to its own bound),
/// repeating until the group's hourly sum has magnitude at most
/// ceil(group_size / 2).
pub fn generate_flows(
    configs: &[StationConfig],
    master_seed: u64,
    episode: u64,
) -> Result<Vec<FlowSchedule>, SimError> {
    let mut flows = Vec::with_capacity(configs.len());
    for config in configs {
        config.validate()?;
        flows.push(draw_station_flows(config, master_seed, episode)?);
    }

    let conserving: Vec<usize> = configs
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.flow_mode, FlowMode::Conserving))
        .map(|(i, _)| i)
        .collect();
    if !conserving.is_empty() {
        balance_conserving(&mut flows, configs, &conserving)?;
    }

    Ok(configs
        .iter()
        .zip(flows)
        .map(|(config, flows)| FlowSchedule {
            flows,
            lineage: SeedLineage {
                master_seed,
                station_id: config.station_id,
                episode,
            },
        })
        .collect())
}

#[allow(clippy::needless_range_loop)] // hour indexes several station rows at once
fn balance_conserving(
    flows: &mut [Vec<i64>],
    configs: &[StationConfig],
    members: &[usize],
) -> Result<(), SimError> {
    let group = members.len() as i64;
    let limit = (group + 1) / 2;
    let hours = flows[members[0]].len();
    for hour in 0..hours {
        // One subtraction pass can leave the sum over the limit when clamping
        // bites, so repeat until the bound holds. Each pass moves the sum
        // toward zero by at least one, so this terminates.
        for _ in 0..100_000 {
            let sum: i64 = members.iter().map(|&i| flows[i][hour]).sum();
            if sum.abs() <= limit {
                break;
            }
            let shift = (sum as f64 / group as f64).round() as i64;
            debug_assert_ne!(shift, 0);
            for &i in members {
                let bound = configs[i].flow_bound;
                flows[i][hour] = (flows[i][hour] - shift).clamp(-bound, bound);
            }
        }
        let sum: i64 = members.iter().map(|&i| flows[i][hour]).sum();
        if sum.abs() > limit {
            return Err(SimError::InvalidConfig(
                "conserving flow adjustment failed to converge".into(),
            ));
        }
    }
    Ok(())
}

/// One station environment, driven by a single caller for one episode at a time.
#[derive(Debug, Clone)]
pub struct Station {
    config: StationConfig,
    actions: ActionSet,
    schedule: FlowSchedule,
    state: StationState,
    done: bool,
}

impl Station {
    pub fn new(config: StationConfig, actions: ActionSet, schedule: FlowSchedule) -> Self {
        let state = StationState::fresh(config.initial_stock);
        Self {
            config,
            actions,
            schedule,
            state,
            done: false,
        }
    }

    /// Start a new episode with a pre-generated schedule. Analytics from the
    /// prior episode stay with the caller; the environment keeps nothing.
    pub fn reset(&mut self, schedule: FlowSchedule) {
        self.schedule = schedule;
        self.state = StationState::fresh(self.config.initial_stock);
        self.done = false;
    }

    /// Reset for an episode with the schedule derived from this station's
    /// seed lineage alone. Not meaningful for conserving mode, which needs
    /// the whole network; see [`generate_flows`].
    pub fn reset_for_episode(&mut self, master_seed: u64, episode: u64) -> Result<(), SimError> {
        let schedules = generate_flows(std::slice::from_ref(&self.config), master_seed, episode)?;
        self.reset(schedules.into_iter().next().unwrap());
        Ok(())
    }

    pub fn observe(&self) -> StockState {
        StockState {
            hour: self.state.hour,
            stock: self.state.stock,
        }
    }

    pub fn step(&mut self, action: i64) -> Result<StepFeedback, SimError> {
        if self.done {
            return Err(SimError::EpisodeOver);
        }
        if !self.actions.contains(action) {
            return Err(SimError::InvalidAction { action });
        }
        let hour = self.state.hour;
        let old_stock = self.state.stock;
        let new_stock = old_stock + action;
        let cap = self.config.cap();
        let reward = reward_for_hour(new_stock, hour, action, cap);
        self.state.post_action_history.push(new_stock);
        let terminal = hour == FINAL_HOUR;
        if terminal {
            self.state.stock = new_stock;
            self.done = true;
        } else {
            self.state.stock = new_stock + self.schedule.flows[hour as usize];
            self.state.hour = hour + 1;
        }
        Ok(StepFeedback {
            old_stock,
            action_applied: action,
            new_stock,
            reward,
            in_range: stock_in_range(new_stock, cap),
            terminal,
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> &StationState {
        &self.state
    }

    pub fn config(&self) -> &StationConfig {
        &self.config
    }

    pub fn schedule(&self) -> &FlowSchedule {
        &self.schedule
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }
}

/// Parse a deterministic-flow file: one line per station, 23 comma-separated
/// integers, lines ordered by station_id.
pub fn parse_flow_file(reader: impl BufRead) -> Result<Vec<Vec<i64>>, SimError> {
    let mut schedules = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            return Err(SimError::FlowFile {
                line: lineno,
                message: "empty line".into(),
            });
        }
        let flows: Vec<i64> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<i64>().map_err(|_| SimError::FlowFile {
                    line: lineno,
                    message: format!("not an integer: {:?}", field.trim()),
                })
            })
            .collect::<Result<_, _>>()?;
        if flows.len() != FLOWS_PER_EPISODE {
            return Err(SimError::FlowFile {
                line: lineno,
                message: format!("expected {} flows, got {}", FLOWS_PER_EPISODE, flows.len()),
            });
        }
        schedules.push(flows);
    }
    if schedules.is_empty() {
        return Err(SimError::FlowFile {
            line: 1,
            message: "file contains no schedules".into(),
        });
    }
    Ok(schedules)
}

pub fn load_flow_file(path: &Path) -> Result<Vec<Vec<i64>>, SimError> {
    parse_flow_file(BufReader::new(File::open(path)?))
}
