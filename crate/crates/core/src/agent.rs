//! One Q-learning agent per station.
//!
//! The table is sparse over (hour, stock) states: unseen states read as all
//! zeros with zero visit counts and are only materialized by learning or by
//! adopting repository knowledge. Every stored state carries exactly one slot
//! per configured action.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::actions::{argmax_action, ActionSet};
use crate::knowledge::KnowledgePacket;
use crate::sim::StockState;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("action {action} is not in the agent's action set")]
    ActionNotInSet { action: i64 },
    #[error("transfer requires identical action sets")]
    ActionSetMismatch,
    #[error("trust must be a finite value >= 0, got {0}")]
    InvalidTrust(f64),
}

/// Per-(state, action) value estimate and how many updates produced it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Slot {
    pub q: f64,
    pub visits: u64,
}

/// Sparse state-action value table.
///
/// Keyed by a `BTreeMap` so iteration order is canonical everywhere: file
/// output, distillation, and pooling are all independent of insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: ActionSet,
    entries: BTreeMap<StockState, Vec<Slot>>,
}

impl QTable {
    pub fn new(actions: ActionSet) -> Self {
        Self {
            actions,
            entries: BTreeMap::new(),
        }
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    /// Number of stored states.
    pub fn state_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Q-value for (state, action); zero when the state was never stored.
    ///
    /// Panics if `action` is not in the action set.
    pub fn q(&self, state: StockState, action: i64) -> f64 {
        let idx = self.index_of(action);
        self.entries.get(&state).map_or(0.0, |slots| slots[idx].q)
    }

    /// Visit count for (state, action); zero when the state was never stored.
    pub fn visits(&self, state: StockState, action: i64) -> u64 {
        let idx = self.index_of(action);
        self.entries
            .get(&state)
            .map_or(0, |slots| slots[idx].visits)
    }

    /// Highest Q-value over all actions at `state` (zero for unseen states).
    pub fn max_q(&self, state: StockState) -> f64 {
        match self.entries.get(&state) {
            None => 0.0,
            Some(slots) => slots
                .iter()
                .map(|s| s.q)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Greedy action at `state`: highest Q, ties to the smallest |action|,
    /// then the negative one. A pure function of (state, table).
    pub fn best_action(&self, state: StockState) -> i64 {
        match self.entries.get(&state) {
            None => 0,
            Some(slots) => {
                argmax_action(self.actions.iter().zip(slots.iter().map(|s| s.q)))
                    .expect("action set is never empty")
                    .0
            }
        }
    }

    /// Iterate stored states with their per-action slots, in (hour, stock) order.
    pub fn states(&self) -> impl Iterator<Item = (StockState, &[Slot])> {
        self.entries.iter().map(|(s, slots)| (*s, slots.as_slice()))
    }

    pub fn contains_state(&self, state: StockState) -> bool {
        self.entries.contains_key(&state)
    }

    fn index_of(&self, action: i64) -> usize {
        self.actions
            .index_of(action)
            .unwrap_or_else(|| panic!("action {action} not in action set"))
    }

    fn ensure_state(&mut self, state: StockState) -> &mut Vec<Slot> {
        let len = self.actions.len();
        self.entries
            .entry(state)
            .or_insert_with(|| vec![Slot::default(); len])
    }

    pub(crate) fn set_slot(&mut self, state: StockState, action_index: usize, slot: Slot) {
        self.ensure_state(state)[action_index] = slot;
    }

    pub(crate) fn insert_state(&mut self, state: StockState, slots: Vec<Slot>) {
        debug_assert_eq!(slots.len(), self.actions.len());
        self.entries.insert(state, slots);
    }

    /// Total visit count across every slot.
    pub fn total_visits(&self) -> u64 {
        self.entries
            .values()
            .flat_map(|slots| slots.iter())
            .map(|s| s.visits)
            .sum()
    }

    /// Count-weighted pooling of repository knowledge into this table.
    ///
    /// For a (state, action) present on both sides the value becomes
    /// `(c_own*q_own + t*c_repo*q_repo) / (c_own + t*c_repo)` whenever that
    /// denominator is positive. Visit counts are left alone: they keep
    /// counting this agent's own updates, and folding repository counts in
    /// would compound them across repeated exchanges. States present only in
    /// the repository are adopted verbatim with counts scaled by `t` (rounded
    /// down, minimum 1 for visited slots). Local-only states are untouched.
    /// `t = 0` is a no-op.
    pub fn pool_from(&mut self, repo_view: &QTable, trust: f64) -> Result<(), AgentError> {
        if repo_view.actions != self.actions {
            return Err(AgentError::ActionSetMismatch);
        }
        if !(trust >= 0.0 && trust.is_finite()) {
            return Err(AgentError::InvalidTrust(trust));
        }
        if trust == 0.0 {
            return Ok(());
        }
        let scaled = |visits: u64| -> u64 {
            if visits == 0 {
                0
            } else {
                ((trust * visits as f64).floor() as u64).max(1)
            }
        };
        for (state, repo_slots) in repo_view.states() {
            match self.entries.get_mut(&state) {
                None => {
                    let adopted = repo_slots
                        .iter()
                        .map(|r| Slot {
                            q: r.q,
                            visits: scaled(r.visits),
                        })
                        .collect();
                    self.entries.insert(state, adopted);
                }
                Some(own_slots) => {
                    for (own, repo) in own_slots.iter_mut().zip(repo_slots) {
                        let weight = trust * repo.visits as f64;
                        let denom = own.visits as f64 + weight;
                        if denom > 0.0 {
                            own.q = (own.visits as f64 * own.q + weight * repo.q) / denom;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// How the step size is chosen for each update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    /// 1/N where N is the post-update visit count of the slot.
    InverseVisits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub action_set: ActionSet,
    pub learning_rate: LearningRate,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the session's episodes over which epsilon anneals linearly.
    pub epsilon_decay_fraction: f64,
}

impl AgentConfig {
    /// Conventional tabular settings; everything is overridable.
    pub fn defaults(action_set: ActionSet) -> Self {
        Self {
            action_set,
            learning_rate: LearningRate::Fixed(0.1),
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if let LearningRate::Fixed(alpha) = self.learning_rate {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(AgentError::InvalidConfig(format!(
                    "learning rate must be in (0, 1], got {alpha}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(AgentError::InvalidConfig(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        for (name, eps) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(AgentError::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {eps}"
                )));
            }
        }
        if self.epsilon_start < self.epsilon_end {
            return Err(AgentError::InvalidConfig(
                "epsilon_start must be >= epsilon_end".into(),
            ));
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "epsilon_decay_fraction must be in (0, 1], got {}",
                self.epsilon_decay_fraction
            )));
        }
        Ok(())
    }

    /// Linearly annealed epsilon for the given episode of a session.
    pub fn epsilon_at(&self, episode: u64, total_episodes: u64) -> f64 {
        let span = (total_episodes as f64 * self.epsilon_decay_fraction).max(1.0);
        if episode as f64 >= span {
            return self.epsilon_end;
        }
        let progress = episode as f64 / span;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress
    }
}

/// One transition, as fed to [`Agent::learn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: StockState,
    pub action: i64,
    pub reward: f64,
    /// None marks the terminal transition (final hour).
    pub next_state: Option<StockState>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    table: QTable,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let table = QTable::new(config.action_set.clone());
        Ok(Self { config, table })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    /// Epsilon-greedy selection. With probability `epsilon` a uniformly random
    /// member of the action set; otherwise the greedy action. With
    /// `epsilon = 0` no randomness is consumed at all.
    pub fn choose_action(&self, state: StockState, epsilon: f64, rng: &mut impl Rng) -> i64 {
        debug_assert!((0.0..=1.0).contains(&epsilon));
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            let idx = rng.gen_range(0..self.config.action_set.len());
            self.config.action_set.get(idx)
        } else {
            self.table.best_action(state)
        }
    }

    pub fn best_action(&self, state: StockState) -> i64 {
        self.table.best_action(state)
    }

    /// One-step Q-learning update:
    /// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)),
    /// with a zero bootstrap on terminal transitions. Touches nothing besides
    /// the (s, a) slot; in particular the next state is never materialized.
    pub fn learn(&mut self, exp: &Experience) -> Result<(), AgentError> {
        let Some(action_idx) = self.config.action_set.index_of(exp.action) else {
            return Err(AgentError::ActionNotInSet { action: exp.action });
        };
        let bootstrap = match exp.next_state {
            Some(next) => self.table.max_q(next),
            None => 0.0,
        };
        let target = exp.reward + self.config.gamma * bootstrap;
        let slot = &mut self.table.ensure_state(exp.state)[action_idx];
        let visits = slot.visits + 1;
        let alpha = match self.config.learning_rate {
            LearningRate::Fixed(alpha) => alpha,
            LearningRate::InverseVisits => 1.0 / visits as f64,
        };
        slot.q += alpha * (target - slot.q);
        slot.visits = visits;
        Ok(())
    }

    /// Deep snapshot of the current table for the knowledge repository.
    /// Later learning never mutates the packet.
    pub fn upload(&self, agent_id: u32, episode_stamp: u64) -> KnowledgePacket {
        KnowledgePacket::new(agent_id, episode_stamp, self.table.clone())
    }

    /// Consolidate repository knowledge into the agent's own table.
    pub fn download(&mut self, repo_view: &QTable, trust: f64) -> Result<(), AgentError> {
        self.table.pool_from(repo_view, trust)
    }

    /// Replace the table wholesale (used when seeding fresh agents in tests).
    pub fn set_table(&mut self, table: QTable) -> Result<(), AgentError> {
        if table.actions() != &self.config.action_set {
            return Err(AgentError::ActionSetMismatch);
        }
        self.table = table;
        Ok(())
    }
}
