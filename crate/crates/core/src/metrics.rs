//! Benchmark quantities: success ratios, movement cost, reward areas, the
//! transfer ratio, the meta-agent action-space formula, and a
//! backward-induction oracle for verifying learned policies on deterministic
//! episodes.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::actions::{argmax_action, ActionSet};
use crate::sim::{
    reward_on_horizon, FlowSchedule, StationConfig, COST_PER_BIKE_MOVED, HOURS_PER_EPISODE,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("post-action history must have exactly {expected} entries, got {got}")]
    WrongHistoryLength { expected: usize, got: usize },
    #[error("input must not be empty")]
    EmptyInput,
    #[error("transfer ratio undefined: area without transfer is zero")]
    UndefinedRatio,
    #[error("need at least {needed} episodes, got {got}")]
    InsufficientEpisodes { needed: u64, got: u64 },
    #[error("invalid session summary: {0}")]
    InvalidSummary(String),
}

/// Everything tracked for one episode of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub per_station_reward: Vec<f64>,
    pub per_station_success: Vec<bool>,
    /// Sum of |action| over all stations and hours.
    pub bikes_moved: u64,
    pub total_reward: f64,
}

impl EpisodeRecord {
    pub fn success_ratio(&self) -> Result<f64, MetricsError> {
        success_ratio(&self.per_station_success)
    }

    pub fn complete_success(&self) -> Result<bool, MetricsError> {
        complete_network_success(&self.per_station_success)
    }

    pub fn movement_cost(&self) -> f64 {
        COST_PER_BIKE_MOVED * self.bikes_moved as f64
    }
}

/// All episode records of one session, in episode order.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub label: String,
    pub records: Vec<EpisodeRecord>,
}

impl SessionSummary {
    /// Records must be contiguous from episode 0 and agree on station count.
    pub fn new(label: impl Into<String>, records: Vec<EpisodeRecord>) -> Result<Self, MetricsError> {
        for (i, record) in records.iter().enumerate() {
            if record.episode != i as u64 {
                return Err(MetricsError::InvalidSummary(format!(
                    "record {i} has episode {}",
                    record.episode
                )));
            }
            if record.per_station_reward.len() != record.per_station_success.len() {
                return Err(MetricsError::InvalidSummary(format!(
                    "record {i}: reward and success lengths differ"
                )));
            }
            if record.per_station_reward.len() != records[0].per_station_reward.len() {
                return Err(MetricsError::InvalidSummary(format!(
                    "record {i}: station count changed mid-session"
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// True iff every hour's post-action stock stayed in [0, cap], inclusive.
pub fn station_success(post_action_history: &[i64], cap: i64) -> Result<bool, MetricsError> {
    if post_action_history.len() != HOURS_PER_EPISODE {
        return Err(MetricsError::WrongHistoryLength {
            expected: HOURS_PER_EPISODE,
            got: post_action_history.len(),
        });
    }
    Ok(post_action_history.iter().all(|&s| (0..=cap).contains(&s)))
}

/// Fraction of successful stations.
pub fn success_ratio(flags: &[bool]) -> Result<f64, MetricsError> {
    if flags.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// True iff every station in the network was successful.
pub fn complete_network_success(flags: &[bool]) -> Result<bool, MetricsError> {
    if flags.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(flags.iter().all(|&f| f))
}

/// 0.5 per bike moved, summed over the given actions.
pub fn movement_cost(actions: &[i64]) -> f64 {
    COST_PER_BIKE_MOVED * actions.iter().map(|a| a.unsigned_abs()).sum::<u64>() as f64
}

/// Discrete sum of total reward over all episodes.
pub fn area_under_reward(summary: &SessionSummary) -> Result<f64, MetricsError> {
    if summary.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(summary.records.iter().map(|r| r.total_reward).sum())
}

/// Trailing moving average of total reward, for display only. Never feeds
/// the transfer ratio.
pub fn smoothed_rewards(summary: &SessionSummary, window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(summary.len());
    let mut running = 0.0;
    for (i, record) in summary.records.iter().enumerate() {
        running += record.total_reward;
        if i >= window {
            running -= summary.records[i - window].total_reward;
        }
        let denom = window.min(i + 1) as f64;
        out.push(running / denom);
    }
    out
}

/// Relative area improvement R = (with - without) / |without|.
///
/// The absolute-value denominator keeps "bigger area is better" semantics
/// when both areas are negative.
pub fn transfer_ratio(area_with: f64, area_without: f64) -> Result<f64, MetricsError> {
    if area_without == 0.0 {
        return Err(MetricsError::UndefinedRatio);
    }
    Ok((area_with - area_without) / area_without.abs())
}

/// The raw formula with a signed denominator, kept for fidelity comparisons.
pub fn transfer_ratio_raw(area_with: f64, area_without: f64) -> Result<f64, MetricsError> {
    if area_without == 0.0 {
        return Err(MetricsError::UndefinedRatio);
    }
    Ok((area_with - area_without) / area_without)
}

/// Size of a hypothetical meta-agent's action space:
/// viable actions per edge times the n(n-1)/2 undirected edges.
pub fn meta_action_count(viable_actions_per_edge: u64, stations: u64) -> u64 {
    if stations < 2 {
        return 0;
    }
    viable_actions_per_edge * (stations * (stations - 1) / 2)
}

/// Early-window reward advantage of the experienced run over the naive run:
/// mean total reward over episodes 0..first_n, experienced minus naive.
pub fn jumpstart(
    naive: &SessionSummary,
    experienced: &SessionSummary,
    first_n: u64,
) -> Result<f64, MetricsError> {
    if first_n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    for summary in [naive, experienced] {
        if (summary.len() as u64) < first_n {
            return Err(MetricsError::InsufficientEpisodes {
                needed: first_n,
                got: summary.len() as u64,
            });
        }
    }
    let mean = |s: &SessionSummary| {
        s.records[..first_n as usize]
            .iter()
            .map(|r| r.total_reward)
            .sum::<f64>()
            / first_n as f64
    };
    Ok(mean(experienced) - mean(naive))
}

/// Optimal plan for one deterministic episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    /// Discounted episode reward of the optimal plan.
    pub value: f64,
    /// One action per hour; ties broken exactly like greedy action selection.
    pub actions: Vec<i64>,
}

/// Exhaustive backward induction over reachable (hour, stock) states under
/// the exact station dynamics. The returned value upper-bounds the discounted
/// reward of every policy on this schedule.
pub fn dp_oracle(
    config: &StationConfig,
    schedule: &FlowSchedule,
    actions: &ActionSet,
    gamma: f64,
) -> DpSolution {
    solve_horizon(
        config.initial_stock,
        config.cap(),
        schedule.flows(),
        actions,
        gamma,
    )
}

/// Core recursion over an arbitrary horizon of flows.len() + 1 hours, with
/// the terminal bonus at the last hour. Kept separate so short horizons can
/// be checked against brute-force sequence search.
pub(crate) fn solve_horizon(
    initial_stock: i64,
    cap: i64,
    flows: &[i64],
    actions: &ActionSet,
    gamma: f64,
) -> DpSolution {
    let horizon = flows.len() + 1;
    let final_hour = (horizon - 1) as u8;

    let mut reachable: Vec<BTreeSet<i64>> = Vec::with_capacity(horizon);
    reachable.push(BTreeSet::from([initial_stock]));
    for hour in 0..horizon - 1 {
        let next: BTreeSet<i64> = reachable[hour]
            .iter()
            .flat_map(|&stock| actions.iter().map(move |a| stock + a + flows[hour]))
            .collect();
        reachable.push(next);
    }

    let mut next_values: BTreeMap<i64, f64> = BTreeMap::new();
    let mut policy: Vec<BTreeMap<i64, i64>> = vec![BTreeMap::new(); horizon];
    for hour in (0..horizon).rev() {
        let mut values = BTreeMap::new();
        for &stock in &reachable[hour] {
            let (best_action, best_value) = argmax_action(actions.iter().map(|action| {
                let post = stock + action;
                let mut value =
                    reward_on_horizon(post, hour as u8, final_hour, action, cap);
                if hour + 1 < horizon {
                    value += gamma * next_values[&(post + flows[hour])];
                }
                (action, value)
            }))
            .expect("action set is never empty");
            values.insert(stock, best_value);
            policy[hour].insert(stock, best_action);
        }
        next_values = values;
    }

    let mut plan = Vec::with_capacity(horizon);
    let mut stock = initial_stock;
    for hour in 0..horizon {
        let action = policy[hour][&stock];
        plan.push(action);
        stock += action;
        if hour < flows.len() {
            stock += flows[hour];
        }
    }

    DpSolution {
        value: next_values[&initial_stock],
        actions: plan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_flows, FlowMode, Station, FLOWS_PER_EPISODE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(episode: u64, rewards: Vec<f64>, success: Vec<bool>, moved: u64) -> EpisodeRecord {
        let total = rewards.iter().sum();
        EpisodeRecord {
            episode,
            per_station_reward: rewards,
            per_station_success: success,
            bikes_moved: moved,
            total_reward: total,
        }
    }

    fn summary_of(rewards: &[f64]) -> SessionSummary {
        let records = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| record(i as u64, vec![r], vec![true], 0))
            .collect();
        SessionSummary::new("test", records).unwrap()
    }

    #[test]
    fn station_success_bounds_are_inclusive() {
        let cap = 12;
        assert!(station_success(&[cap; 24], cap).unwrap());
        assert!(station_success(&[0; 24], cap).unwrap());
        let mut history = [5i64; 24];
        history[11] = -1;
        assert!(!station_success(&history, cap).unwrap());
        history[11] = cap + 1;
        assert!(!station_success(&history, cap).unwrap());
        assert!(matches!(
            station_success(&[0; 23], cap),
            Err(MetricsError::WrongHistoryLength { expected: 24, got: 23 })
        ));
        // initial_stock 10 at threshold 1.2 gives cap 12; constant 12 passes.
        assert!(station_success(&[12; 24], 12).unwrap());
    }

    #[test]
    fn success_ratio_examples() {
        assert!((success_ratio(&[true, true, false]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(success_ratio(&[false, false, false]).unwrap(), 0.0);
        assert_eq!(success_ratio(&[true, true, true]).unwrap(), 1.0);
        assert_eq!(success_ratio(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn complete_network_success_is_conjunction() {
        assert!(complete_network_success(&[true, true, true]).unwrap());
        assert!(!complete_network_success(&[true, false, true]).unwrap());
        assert!(complete_network_success(&[true]).unwrap());
        assert_eq!(complete_network_success(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn success_ratio_stays_in_unit_interval_and_complete_implies_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let flags: Vec<bool> = (0..rng.gen_range(1..=8)).map(|_| rng.gen()).collect();
            let ratio = success_ratio(&flags).unwrap();
            assert!((0.0..=1.0).contains(&ratio));
            if complete_network_success(&flags).unwrap() {
                assert_eq!(ratio, 1.0);
            }
        }
    }

    #[test]
    fn movement_cost_is_zero_only_for_all_zero_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let actions: Vec<i64> = (0..rng.gen_range(0..=30))
                .map(|_| rng.gen_range(-30i64..=30))
                .collect();
            let cost = movement_cost(&actions);
            assert!(cost >= 0.0);
            assert_eq!(cost == 0.0, actions.iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn movement_cost_examples() {
        assert_eq!(movement_cost(&[]), 0.0);
        assert_eq!(movement_cost(&[-10, 3, 0]), 6.5);
        let paper_set = [-30i64, -20, -10, -3, -1, 0, 1, 3, 10, 20, 30];
        assert_eq!(movement_cost(&paper_set), 64.0);
    }

    #[test]
    fn area_is_a_plain_sum() {
        assert_eq!(area_under_reward(&summary_of(&[1.0, 2.0, 3.0])).unwrap(), 6.0);
        assert_eq!(area_under_reward(&summary_of(&[0.0; 5])).unwrap(), 0.0);
        assert_eq!(area_under_reward(&summary_of(&[-5.0, 5.0])).unwrap(), 0.0);
        let empty = SessionSummary::new("empty", vec![]).unwrap();
        assert_eq!(area_under_reward(&empty), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn smoothing_is_display_only() {
        let summary = summary_of(&[0.0, 10.0, 20.0, 30.0]);
        let smoothed = smoothed_rewards(&summary, 2);
        assert_eq!(smoothed, vec![0.0, 5.0, 15.0, 25.0]);
        // The area stays the raw sum no matter what smoothing a caller renders.
        assert_eq!(area_under_reward(&summary).unwrap(), 60.0);
    }

    #[test]
    fn transfer_ratio_examples() {
        assert!((transfer_ratio(130.0, 100.0).unwrap() - 0.30).abs() < 1e-12);
        assert_eq!(transfer_ratio(42.0, 42.0).unwrap(), 0.0);
        assert!((transfer_ratio(-80.0, -100.0).unwrap() - 0.20).abs() < 1e-12);
        assert_eq!(transfer_ratio(1.0, 0.0), Err(MetricsError::UndefinedRatio));
        // The raw formula flips sign on negative denominators.
        assert!((transfer_ratio_raw(-80.0, -100.0).unwrap() + 0.20).abs() < 1e-12);
    }

    #[test]
    fn meta_action_count_examples_and_growth() {
        assert_eq!(meta_action_count(3, 3), 9);
        assert_eq!(meta_action_count(11, 1), 0);
        assert_eq!(meta_action_count(11, 10), 495);
        for k in 0..=11u64 {
            for n in 1..=50u64 {
                let step = meta_action_count(k, n + 1) - meta_action_count(k, n);
                assert_eq!(step, k * n, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn jumpstart_examples() {
        let naive = summary_of(&[1.0; 200]);
        assert_eq!(jumpstart(&naive, &naive, 100).unwrap(), 0.0);
        let better = summary_of(&[11.0; 200]);
        assert_eq!(jumpstart(&naive, &better, 100).unwrap(), 10.0);
        let short = summary_of(&[1.0; 50]);
        assert!(matches!(
            jumpstart(&naive, &short, 100),
            Err(MetricsError::InsufficientEpisodes { needed: 100, got: 50 })
        ));
    }

    #[test]
    fn summary_rejects_gaps_and_ragged_records() {
        let bad = vec![record(1, vec![1.0], vec![true], 0)];
        assert!(SessionSummary::new("x", bad).is_err());
        let ragged = vec![
            record(0, vec![1.0], vec![true], 0),
            record(1, vec![1.0, 2.0], vec![true, true], 0),
        ];
        assert!(SessionSummary::new("x", ragged).is_err());
    }

    fn deterministic_station(flows: Vec<i64>) -> (StationConfig, FlowSchedule) {
        let config =
            StationConfig::new(0, 10, 1.2, FlowMode::Deterministic { flows }, 20).unwrap();
        let schedule = generate_flows(std::slice::from_ref(&config), 0, 0)
            .unwrap()
            .remove(0);
        (config, schedule)
    }

    #[test]
    fn dp_oracle_on_calm_day_does_nothing() {
        let (config, schedule) = deterministic_station(vec![0; FLOWS_PER_EPISODE]);
        let solution = dp_oracle(&config, &schedule, &ActionSet::default_set(), 1.0);
        assert_eq!(solution.value, 50.0);
        assert_eq!(solution.actions, vec![0i64; 24]);
    }

    #[test]
    fn dp_oracle_with_single_action_scores_the_passive_trajectory() {
        let mut flows = vec![0i64; FLOWS_PER_EPISODE];
        flows[0] = 20;
        flows[5] = -7;
        let (config, schedule) = deterministic_station(flows);
        let only_zero = ActionSet::new(vec![0]).unwrap();
        let solution = dp_oracle(&config, &schedule, &only_zero, 1.0);

        let mut station = Station::new(config, only_zero, schedule);
        let mut passive = 0.0;
        while !station.is_done() {
            passive += station.step(0).unwrap().reward;
        }
        assert!((solution.value - passive).abs() < 1e-9);
    }

    #[test]
    fn dp_plan_executed_in_the_simulator_reproduces_its_value() {
        let mut flows = vec![0i64; FLOWS_PER_EPISODE];
        flows[0] = 20;
        flows[7] = -12;
        flows[15] = 9;
        let (config, schedule) = deterministic_station(flows);
        let actions = ActionSet::default_set();
        for gamma in [1.0, 0.9] {
            let solution = dp_oracle(&config, &schedule, &actions, gamma);
            let mut station = Station::new(config.clone(), actions.clone(), schedule.clone());
            let mut total = 0.0;
            let mut discount = 1.0;
            for &action in &solution.actions {
                total += discount * station.step(action).unwrap().reward;
                discount *= gamma;
            }
            assert!(
                (solution.value - total).abs() < 1e-9,
                "gamma {gamma}: {} vs {total}",
                solution.value
            );
        }
    }

    #[test]
    fn dp_value_dominates_random_policies() {
        let (config, schedule) = deterministic_station({
            let mut flows = vec![0i64; FLOWS_PER_EPISODE];
            flows[0] = 20;
            flows[11] = -15;
            flows
        });
        let actions = ActionSet::default_set();
        let solution = dp_oracle(&config, &schedule, &actions, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000 {
            let mut station = Station::new(config.clone(), actions.clone(), schedule.clone());
            let mut total = 0.0;
            while !station.is_done() {
                let a = actions.get(rng.gen_range(0..actions.len()));
                total += station.step(a).unwrap().reward;
            }
            assert!(solution.value >= total - 1e-9);
        }
    }

    // Brute-force check of the recursion on a short horizon: every action
    // sequence of length 4 is enumerated and scored under the same dynamics.
    #[test]
    fn short_horizon_dp_matches_exhaustive_search() {
        let actions = ActionSet::default_set();
        let flows = [18i64, -9, 4];
        let (initial, cap) = (10i64, 12i64);
        for gamma in [1.0, 0.9] {
            let dp = solve_horizon(initial, cap, &flows, &actions, gamma);

            let horizon = flows.len() + 1;
            let final_hour = (horizon - 1) as u8;
            let mut best = f64::NEG_INFINITY;
            let count = actions.len().pow(horizon as u32);
            for mut index in 0..count {
                let mut stock = initial;
                let mut total = 0.0;
                let mut discount = 1.0;
                for hour in 0..horizon {
                    let action = actions.get(index % actions.len());
                    index /= actions.len();
                    let post = stock + action;
                    total += discount
                        * crate::sim::reward_on_horizon(
                            post,
                            hour as u8,
                            final_hour,
                            action,
                            cap,
                        );
                    discount *= gamma;
                    stock = post + if hour < flows.len() { flows[hour] } else { 0 };
                }
                best = best.max(total);
            }
            assert!(
                (dp.value - best).abs() < 1e-9,
                "gamma {gamma}: dp {} vs brute force {best}",
                dp.value
            );
        }
    }
}
