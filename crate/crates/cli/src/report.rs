//! Plot-ready metric files and human-readable summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dirl_core::metrics::{area_under_reward, EpisodeRecord, SessionSummary};
use dirl_core::orchestrator::{BenchmarkResult, SessionResult};
use dirl_core::QTable;

use crate::CliError;

pub const CSV_HEADER: &str = "episode,total_reward,success_ratio,complete_success,bikes_moved,cost";

pub fn csv_row(record: &EpisodeRecord) -> String {
    let ratio = record
        .success_ratio()
        .expect("session records always cover at least one station");
    let complete = record
        .complete_success()
        .expect("session records always cover at least one station");
    format!(
        "{},{},{},{},{},{}",
        record.episode,
        record.total_reward,
        ratio,
        u8::from(complete),
        record.bikes_moved,
        record.movement_cost()
    )
}

pub fn write_episodes_csv(path: &Path, summary: &SessionSummary) -> Result<(), CliError> {
    let mut out = String::with_capacity(64 * (summary.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in &summary.records {
        out.push_str(&csv_row(record));
        out.push('\n');
    }
    write_file(path, &out)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn complete_successes(summary: &SessionSummary) -> usize {
    summary
        .records
        .iter()
        .filter(|r| r.complete_success().unwrap_or(false))
        .count()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean movement cost over complete-success episodes, per training quartile.
/// None marks a quartile with no complete successes.
pub fn quartile_costs(summary: &SessionSummary) -> [Option<f64>; 4] {
    let n = summary.len();
    let mut out = [None; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        let records = &summary.records[q * n / 4..(q + 1) * n / 4];
        *slot = mean(
            records
                .iter()
                .filter(|r| r.complete_success().unwrap_or(false))
                .map(EpisodeRecord::movement_cost),
        );
    }
    out
}

fn mean_success_ratio(records: &[EpisodeRecord]) -> f64 {
    mean(records.iter().map(|r| {
        r.success_ratio()
            .expect("session records always cover at least one station")
    }))
    .unwrap_or(0.0)
}

pub fn session_summary_text(result: &SessionResult) -> String {
    let summary = &result.summary;
    let n = summary.len();
    let tail = &summary.records[n.saturating_sub(1_000)..];
    let area = area_under_reward(summary).unwrap_or(0.0);
    let complete = complete_successes(summary);
    let cost_over_complete = mean(
        summary
            .records
            .iter()
            .filter(|r| r.complete_success().unwrap_or(false))
            .map(EpisodeRecord::movement_cost),
    );
    let knowledge_states = result
        .final_knowledge
        .fetch()
        .map(|t| t.state_count())
        .unwrap_or(0);

    let mut out = String::new();
    let _ = writeln!(out, "label: {}", summary.label);
    let _ = writeln!(out, "episodes: {n}");
    let _ = writeln!(out, "area under reward: {area}");
    let _ = writeln!(
        out,
        "mean success ratio (all episodes): {:.4}",
        mean_success_ratio(&summary.records)
    );
    let _ = writeln!(
        out,
        "mean success ratio (last {} episodes): {:.4}",
        tail.len(),
        mean_success_ratio(tail)
    );
    let _ = writeln!(out, "complete network successes: {complete}");
    match cost_over_complete {
        Some(cost) => {
            let _ = writeln!(out, "mean cost over complete successes: {cost:.2}");
        }
        None => {
            let _ = writeln!(out, "mean cost over complete successes: na");
        }
    }
    let _ = writeln!(out, "knowledge states: {knowledge_states}");
    let _ = writeln!(out, "wall clock: {:.2}s", result.wall_clock.as_secs_f64());
    out
}

pub fn write_session_summary(path: &Path, result: &SessionResult) -> Result<(), CliError> {
    write_file(path, &session_summary_text(result))
}

/// The transfer report: R, jumpstart, complete-success counts, and the
/// per-quartile cost series for both arms.
pub fn transfer_report_text(result: &BenchmarkResult, first_n: u64) -> String {
    let area_without = area_under_reward(&result.naive.summary).unwrap_or(0.0);
    let area_with = area_under_reward(&result.experienced.summary).unwrap_or(0.0);
    let mut out = String::new();
    let _ = writeln!(out, "episodes={}", result.naive.summary.len());
    let _ = writeln!(out, "first_n={first_n}");
    let _ = writeln!(out, "area_without_transfer={area_without}");
    let _ = writeln!(out, "area_with_transfer={area_with}");
    let _ = writeln!(out, "transfer_ratio={}", result.transfer_ratio);
    let _ = writeln!(out, "transfer_ratio_raw={}", result.transfer_ratio_raw);
    let _ = writeln!(out, "jumpstart={}", result.jumpstart);
    let _ = writeln!(
        out,
        "complete_success_naive={}",
        complete_successes(&result.naive.summary)
    );
    let _ = writeln!(
        out,
        "complete_success_experienced={}",
        complete_successes(&result.experienced.summary)
    );
    for (arm, summary) in [
        ("naive", &result.naive.summary),
        ("experienced", &result.experienced.summary),
    ] {
        for (q, cost) in quartile_costs(summary).iter().enumerate() {
            match cost {
                Some(cost) => {
                    let _ = writeln!(out, "cost_q{}_{arm}={cost}", q + 1);
                }
                None => {
                    let _ = writeln!(out, "cost_q{}_{arm}=na", q + 1);
                }
            }
        }
    }
    out
}

pub fn write_transfer_report(
    path: &Path,
    result: &BenchmarkResult,
    first_n: u64,
) -> Result<(), CliError> {
    write_file(path, &transfer_report_text(result, first_n))
}

/// Human-readable stats for `inspect`: state count, action set, and a
/// visit-count histogram over visited slots.
pub fn inspect_text(table: &QTable, gamma: f64) -> String {
    let mut visited_slots = 0u64;
    let mut total_visits = 0u64;
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    for (_, slots) in table.states() {
        for slot in slots {
            if slot.visits > 0 {
                visited_slots += 1;
                total_visits += slot.visits;
                let decade = slot.visits.ilog10();
                *histogram.entry(decade).or_insert(0) += 1;
            }
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "actions: {}", table.actions());
    let _ = writeln!(out, "gamma: {gamma}");
    let _ = writeln!(out, "states: {}", table.state_count());
    let _ = writeln!(out, "visited slots: {visited_slots}");
    let _ = writeln!(out, "total visits: {total_visits}");
    let _ = writeln!(out, "visit-count histogram:");
    if histogram.is_empty() {
        let _ = writeln!(out, "  (empty)");
    }
    for (decade, count) in histogram {
        let low = 10u64.pow(decade);
        let high = 10u64.pow(decade + 1) - 1;
        let _ = writeln!(out, "  {low}-{high}: {count}");
    }
    out
}
