//! Acceptance suite: one test per release criterion, each printing a
//! PASS line on success.
//!
//! Run with:
//!   cargo test -p dirl-cli --test acceptance -- --nocapture

use std::path::Path;
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dirl_core::actions::ActionSet;
use dirl_core::agent::{Agent, AgentConfig, Experience, LearningRate};
use dirl_core::knowledge::{parse_knowledge, render_knowledge, Repository};
use dirl_core::metrics::{dp_oracle, meta_action_count, transfer_ratio};
use dirl_core::orchestrator::{greedy_rollout, run_benchmark, run_session, SessionConfig};
use dirl_core::sim::{generate_flows, load_flow_file, reward_for_hour, FlowMode, StationConfig};
use dirl_core::StockState;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn pass(number: u32, name: &str) {
    println!("acceptance {number:02} {name}: PASS");
}

fn paper_actions() -> ActionSet {
    ActionSet::default_set()
}

/// The 3-station environment used by the learning-scale criteria: paper
/// action set, flow bound 20, threshold 1.2. Initial stock 80 keeps the
/// uniform-random baseline measurably above zero, and the fast epsilon
/// anneal leaves most of the session exploiting what was learned.
fn network_session(seed: u64, label: &str) -> SessionConfig {
    let mut agent_config = AgentConfig::defaults(paper_actions());
    agent_config.epsilon_decay_fraction = 0.1;
    SessionConfig {
        label: label.into(),
        stations: 3,
        episodes: 10_000,
        master_seed: seed,
        deposit_interval: 100,
        transfer_enabled: true,
        trust: 1.0,
        initial_knowledge: None,
        station_configs: (0..3)
            .map(|id| StationConfig::new(id, 80, 1.2, FlowMode::Independent, 20).unwrap())
            .collect(),
        agent_config,
        workers: 1,
    }
}

fn mean_success_ratio_last(records: &[dirl_core::EpisodeRecord], window: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(window)..];
    tail.iter()
        .map(|r| r.success_ratio().unwrap())
        .sum::<f64>()
        / tail.len() as f64
}

// Criterion 1: the reward schedule, pinned on every boundary with zero
// tolerance. Range terms are frozen literals; the movement term is
// -0.5 per bike moved.
#[test]
fn criterion_01_reward_schedule_exactness() {
    let cap = 12i64;
    let range_term = [
        // (stock, hour) -> range term
        (-1, 0, -30.0),
        (-1, 22, -30.0),
        (-1, 23, -50.0),
        (0, 0, 0.0),
        (0, 22, 0.0),
        (0, 23, 50.0),
        (12, 0, 0.0),
        (12, 22, 0.0),
        (12, 23, 50.0),
        (13, 0, -30.0),
        (13, 22, -30.0),
        (13, 23, -50.0),
    ];
    for &(stock, hour, range) in &range_term {
        for action in [0i64, -3, 10] {
            let expected = range - 0.5 * action.abs() as f64;
            let got = reward_for_hour(stock, hour, action, cap);
            assert_eq!(
                got, expected,
                "stock {stock}, hour {hour}, action {action}"
            );
        }
    }
    // Degenerate zero-cap station: stock 0 is still in range.
    assert_eq!(reward_for_hour(0, 0, 0, 0), 0.0);
    assert_eq!(reward_for_hour(0, 23, 0, 0), 50.0);
    pass(1, "reward-schedule-exactness");
}

// Criterion 2: learn() reproduces hand-computed Watkins updates to 1e-12.
#[test]
fn criterion_02_q_update_exactness() {
    let actions = ActionSet::new(vec![-3, -1, 0, 1, 3]).unwrap();
    let mut config = AgentConfig::defaults(actions.clone());
    config.learning_rate = LearningRate::Fixed(0.1);
    config.gamma = 0.9;
    let mut agent = Agent::new(config).unwrap();

    let s = StockState { hour: 2, stock: 8 };
    let s_next = StockState { hour: 3, stock: 9 };

    // Zero table, unseen next state: Q = 0.1 * (-30 + 0.9 * 0) = -3.0.
    agent
        .learn(&Experience { state: s, action: 1, reward: -30.0, next_state: Some(s_next) })
        .unwrap();
    assert!((agent.table().q(s, 1) - (-3.0)).abs() < 1e-12);

    // Terminal: Q = 0.1 * 50 = 5.0.
    let terminal = StockState { hour: 23, stock: 11 };
    agent
        .learn(&Experience { state: terminal, action: 0, reward: 50.0, next_state: None })
        .unwrap();
    assert!((agent.table().q(terminal, 0) - 5.0).abs() < 1e-12);

    // Non-zero bootstrap: drive Q(s_next, -1) to 2.0 first, then
    // Q(s, 0) = 0.1 * (-30 + 0.9 * 2.0) = -2.82.
    let mut boot_config = AgentConfig::defaults(actions.clone());
    boot_config.learning_rate = LearningRate::Fixed(1.0);
    let mut booted = Agent::new(boot_config).unwrap();
    booted
        .learn(&Experience { state: s_next, action: -1, reward: 2.0, next_state: None })
        .unwrap();
    let mut config = AgentConfig::defaults(actions);
    config.learning_rate = LearningRate::Fixed(0.1);
    config.gamma = 0.9;
    let mut agent = Agent::new(config).unwrap();
    agent.set_table(booted.table().clone()).unwrap();
    agent
        .learn(&Experience { state: s, action: 0, reward: -30.0, next_state: Some(s_next) })
        .unwrap();
    assert!((agent.table().q(s, 0) - (-2.82)).abs() < 1e-12);
    pass(2, "q-update-exactness");
}

// Criterion 3: after 20,000 episodes with a 1/count learning rate on a
// fixed schedule file, the greedy policy earns at least 95% of the
// planning optimum. The fixture is a tight station (band [0, 2]) with
// periodic +3 inflow pulses, so every wrong action has an unambiguous cost.
#[test]
fn criterion_03_dp_oracle_convergence() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/flows_single_station.txt");
    let flows = load_flow_file(&fixture).unwrap().remove(0);
    let station = StationConfig::new(0, 2, 1.2, FlowMode::Deterministic { flows }, 20).unwrap();
    let actions = ActionSet::new(vec![-3, -1, 0, 1, 3]).unwrap();
    let mut agent_config = AgentConfig::defaults(actions.clone());
    agent_config.gamma = 1.0;
    agent_config.learning_rate = LearningRate::InverseVisits;

    let config = SessionConfig {
        label: "dp-convergence".into(),
        stations: 1,
        episodes: 20_000,
        master_seed: 97,
        deposit_interval: 100,
        transfer_enabled: false,
        trust: 1.0,
        initial_knowledge: None,
        station_configs: vec![station.clone()],
        agent_config,
        workers: 1,
    };
    let result = run_session(&config).unwrap();
    let table = result.final_knowledge.fetch().unwrap();
    let (greedy_reward, _) = greedy_rollout(&station, table, 97, 0).unwrap();

    let schedule = generate_flows(std::slice::from_ref(&station), 97, 0)
        .unwrap()
        .remove(0);
    let optimum = dp_oracle(&station, &schedule, &actions, 1.0);
    assert!(
        optimum.value > 0.0,
        "fixture must admit a profitable plan, optimum {}",
        optimum.value
    );
    assert!(
        greedy_reward >= 0.95 * optimum.value,
        "greedy {} < 0.95 * optimum {}",
        greedy_reward,
        optimum.value
    );
    pass(3, "dp-oracle-convergence");
}

// Criterion 4: seed-averaged over 5 seeds, the trained network's mean
// success ratio over the last 1,000 episodes is at least twice the
// uniform-random baseline on identical flows.
#[test]
fn criterion_04_learning_beats_random() {
    let mut learned_sum = 0.0;
    let mut random_sum = 0.0;
    for seed in SEEDS {
        let learned = run_session(&network_session(seed, "learned")).unwrap();
        learned_sum += mean_success_ratio_last(&learned.summary.records, 1_000);

        let mut random_config = network_session(seed, "random");
        random_config.transfer_enabled = false;
        random_config.agent_config.epsilon_start = 1.0;
        random_config.agent_config.epsilon_end = 1.0;
        let random = run_session(&random_config).unwrap();
        random_sum += mean_success_ratio_last(&random.summary.records, 1_000);
    }
    let learned_mean = learned_sum / SEEDS.len() as f64;
    let random_mean = random_sum / SEEDS.len() as f64;
    assert!(
        random_mean > 0.0,
        "random baseline degenerated to zero; the comparison would be vacuous"
    );
    assert!(
        learned_mean >= 2.0 * random_mean,
        "learned {learned_mean:.4} < 2 x random {random_mean:.4}"
    );
    pass(4, "learning-beats-random");
}

// Criterion 5: with the experienced arm initialized from a completed naive
// run's distilled knowledge, jumpstart(first 100) > 0 and R > 0 on at
// least 4 of the 5 seeds.
#[test]
fn criterion_05_transfer_jumpstart() {
    let mut wins = 0usize;
    for seed in SEEDS {
        let mut naive_config = network_session(seed, "naive");
        naive_config.transfer_enabled = false;
        let naive = run_session(&naive_config).unwrap();
        let knowledge = naive.final_knowledge.fetch().unwrap().clone();

        let mut experienced_config = network_session(seed, "experienced");
        experienced_config.initial_knowledge = Some(knowledge);
        let result = run_benchmark(&naive_config, &experienced_config, 100).unwrap();
        println!(
            "  seed {seed}: R = {:.4}, jumpstart = {:.2}",
            result.transfer_ratio, result.jumpstart
        );
        if result.transfer_ratio > 0.0 && result.jumpstart > 0.0 {
            wins += 1;
        }
    }
    assert!(wins >= 4, "transfer helped on only {wins} of 5 seeds");
    pass(5, "transfer-jumpstart");
}

// Criterion 6: on seeds where both the first and last training quartiles
// contain complete network successes, the mean movement cost over those
// episodes must not increase.
#[test]
fn criterion_06_cost_direction() {
    let quartile_cost = |records: &[dirl_core::EpisodeRecord], q: usize| -> Option<f64> {
        let n = records.len();
        let slice = &records[q * n / 4..(q + 1) * n / 4];
        let costs: Vec<f64> = slice
            .iter()
            .filter(|r| r.complete_success().unwrap())
            .map(|r| r.movement_cost())
            .collect();
        (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64)
    };

    let mut qualifying = 0usize;
    for seed in SEEDS {
        let result = run_session(&network_session(seed, "cost")).unwrap();
        let records = &result.summary.records;
        if let (Some(first), Some(last)) = (quartile_cost(records, 0), quartile_cost(records, 3)) {
            qualifying += 1;
            println!("  seed {seed}: first-quartile cost {first:.2}, last-quartile cost {last:.2}");
            assert!(
                last <= first,
                "seed {seed}: cost rose from {first:.2} to {last:.2}"
            );
        }
    }
    assert!(
        qualifying > 0,
        "no seed had complete successes in both quartiles; the check would be vacuous"
    );
    pass(6, "cost-direction");
}

// Criterion 7: the CLI produces byte-identical episodes.csv for
// --workers 1 and --workers 4 under the same seed.
#[test]
fn criterion_07_determinism_parallel_equivalence() {
    let exe = env!("CARGO_BIN_EXE_dirl");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("workers-{workers}"));
        let status = Command::new(exe)
            .args([
                "train",
                "--stations",
                "3",
                "--episodes",
                "500",
                "--seed",
                "11",
                "--workers",
                workers,
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("episodes.csv")).unwrap());
    }
    assert_eq!(
        outputs[0], outputs[1],
        "episodes.csv differs between worker counts"
    );
    assert!(!outputs[0].is_empty());
    pass(7, "determinism-parallel-equivalence");
}

// Criterion 8: save -> load -> save of a 10,000-state distilled table is
// byte-identical, and distillation is invariant over 100 deposit orders.
#[test]
fn criterion_08_knowledge_round_trip() {
    let actions = paper_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // A large table with organic values: every slot comes from real updates.
    let mut agent = Agent::new(AgentConfig::defaults(actions.clone())).unwrap();
    for i in 0..10_000u64 {
        let hour = (i % 24) as u8;
        let state = StockState { hour, stock: (i / 24) as i64 - 200 };
        for _ in 0..rng.gen_range(1..=3) {
            let action = actions.get(rng.gen_range(0..actions.len()));
            let next_state = (hour < 23).then(|| StockState { hour: hour + 1, stock: 0 });
            agent
                .learn(&Experience {
                    state,
                    action,
                    reward: rng.gen_range(-65.0..=50.0),
                    next_state,
                })
                .unwrap();
        }
    }
    let mut repo = Repository::new();
    repo.deposit(agent.upload(0, 0));
    let distilled = repo.distill().unwrap();
    assert_eq!(distilled.state_count(), 10_000);

    let first = render_knowledge(distilled, 0.9);
    let (loaded, gamma) = parse_knowledge(&first).unwrap();
    let second = render_knowledge(&loaded, gamma);
    assert_eq!(first, second, "save -> load -> save changed bytes");

    // Distillation must not care about deposit order.
    let packets: Vec<_> = (0..4u32)
        .map(|id| {
            let mut agent = Agent::new(AgentConfig::defaults(actions.clone())).unwrap();
            for _ in 0..500 {
                let hour = rng.gen_range(0u8..=23);
                let state = StockState { hour, stock: rng.gen_range(-40..=40) };
                let action = actions.get(rng.gen_range(0..actions.len()));
                let next_state = (hour < 23).then(|| StockState { hour: hour + 1, stock: 0 });
                agent
                    .learn(&Experience {
                        state,
                        action,
                        reward: rng.gen_range(-65.0..=50.0),
                        next_state,
                    })
                    .unwrap();
            }
            agent.upload(id, 7)
        })
        .collect();

    let reference = {
        let mut repo = Repository::new();
        for packet in &packets {
            repo.deposit(packet.clone());
        }
        repo.distill().unwrap().clone()
    };
    let reference_bytes = render_knowledge(&reference, 0.9);
    let mut order: Vec<usize> = (0..packets.len()).collect();
    for _ in 0..100 {
        order.shuffle(&mut rng);
        let mut repo = Repository::new();
        for &i in &order {
            repo.deposit(packets[i].clone());
        }
        let distilled = repo.distill().unwrap();
        assert_eq!(distilled, &reference);
        assert_eq!(render_knowledge(distilled, 0.9), reference_bytes);
    }
    pass(8, "knowledge-round-trip");
}

// Criterion 9: formula property suites, exhaustive for n <= 50.
#[test]
fn criterion_09_formula_checks() {
    for k in 0..=20u64 {
        for n in 1..=50u64 {
            assert_eq!(meta_action_count(k, n), k * n * (n - 1) / 2);
            let step = meta_action_count(k, n + 1) - meta_action_count(k, n);
            assert_eq!(step, k * n, "quadratic growth broken at k={k}, n={n}");
        }
    }

    let grid: Vec<f64> = (-40..=40).map(|v| v as f64 * 25.0).collect();
    for &area in &grid {
        if area != 0.0 {
            assert_eq!(transfer_ratio(area, area).unwrap(), 0.0);
        }
    }
    for &without in &grid {
        if without == 0.0 {
            assert!(transfer_ratio(1.0, without).is_err());
            continue;
        }
        for pair in grid.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            assert!(
                transfer_ratio(lo, without).unwrap() < transfer_ratio(hi, without).unwrap(),
                "R not increasing in area_with at without={without}"
            );
        }
    }
    pass(9, "formula-checks");
}
