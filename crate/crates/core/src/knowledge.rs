//! Knowledge repository: collects per-agent Q-table snapshots, distills them
//! into one master table, and persists that table across sessions.
//!
//! # File format
//!
//! The canonical knowledge file is line-oriented text:
//!
//! ```text
//! DIRL-KNOWLEDGE v1
//! actions=<comma-separated sorted action set>
//! gamma=<decimal>                (provenance metadata, not enforced on load)
//! columns=hour,stock,action,q,count
//! <data rows>
//! ```
//!
//! Data rows are sorted ascending by (hour, stock, action), q is printed in
//! the shortest decimal form that round-trips an f64, every line is
//! newline-terminated, and there is no trailing whitespace. Zero-count,
//! zero-value slots are omitted; loading reconstructs them implicitly.
//! save -> load -> save yields byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::actions::ActionSet;
use crate::agent::{QTable, Slot};
use crate::sim::StockState;

pub const KNOWLEDGE_HEADER: &str = "DIRL-KNOWLEDGE v1";
const COLUMNS_LINE: &str = "columns=hour,stock,action,q,count";

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("repository holds no packets; nothing to distill")]
    EmptyRepository,
    #[error("repository has not distilled yet")]
    NotDistilled,
    #[error("deposited packets carry mismatched action sets")]
    MismatchedActionSets,
    #[error("knowledge file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, message: impl Into<String>) -> KnowledgeError {
    KnowledgeError::Format {
        line,
        message: message.into(),
    }
}

/// One agent's uploaded snapshot: the unit of transfer. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgePacket {
    agent_id: u32,
    episode_stamp: u64,
    snapshot: QTable,
}

impl KnowledgePacket {
    pub fn new(agent_id: u32, episode_stamp: u64, snapshot: QTable) -> Self {
        Self {
            agent_id,
            episode_stamp,
            snapshot,
        }
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    pub fn episode_stamp(&self) -> u64 {
        self.episode_stamp
    }

    pub fn snapshot(&self) -> &QTable {
        &self.snapshot
    }
}

/// Pools packets into a single master table and serves it back.
///
/// Keeps only the latest packet per agent: counts are cumulative within a
/// session, so pooling older snapshots would double-count experience.
#[derive(Debug, Clone, Default)]
pub struct Repository {
    packets: BTreeMap<u32, KnowledgePacket>,
    distilled: Option<QTable>,
    distill_stamp: Option<u64>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a repository around an already-distilled table (between-session
    /// transfer: the table came from a knowledge file).
    pub fn from_distilled(table: QTable) -> Self {
        Self {
            packets: BTreeMap::new(),
            distilled: Some(table),
            distill_stamp: None,
        }
    }

    /// Store a packet, replacing any earlier one from the same agent. The
    /// distilled table is untouched until the next [`Repository::distill`].
    pub fn deposit(&mut self, packet: KnowledgePacket) {
        self.packets.insert(packet.agent_id(), packet);
    }

    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    pub fn distill_stamp(&self) -> Option<u64> {
        self.distill_stamp
    }

    /// Pool every deposited packet into the master table.
    ///
    /// Per (state, action): Q = sum(c_i * Q_i) / sum(c_i) and
    /// count = sum(c_i), over the packets with c_i > 0. Slots with zero total
    /// count are omitted. Packets are folded in ascending agent-id order, so
    /// the result is independent of deposit order.
    pub fn distill(&mut self) -> Result<&QTable, KnowledgeError> {
        let mut packets = self.packets.values();
        let Some(first) = packets.next() else {
            return Err(KnowledgeError::EmptyRepository);
        };
        let actions = first.snapshot().actions().clone();
        if packets.any(|p| p.snapshot().actions() != &actions) {
            return Err(KnowledgeError::MismatchedActionSets);
        }

        let mut sums: BTreeMap<StockState, Vec<(f64, u64)>> = BTreeMap::new();
        for packet in self.packets.values() {
            for (state, slots) in packet.snapshot().states() {
                let acc = sums
                    .entry(state)
                    .or_insert_with(|| vec![(0.0, 0); actions.len()]);
                for (slot_acc, slot) in acc.iter_mut().zip(slots) {
                    if slot.visits > 0 {
                        slot_acc.0 += slot.visits as f64 * slot.q;
                        slot_acc.1 += slot.visits;
                    }
                }
            }
        }

        let mut master = QTable::new(actions.clone());
        for (state, acc) in sums {
            if acc.iter().all(|&(_, count)| count == 0) {
                continue;
            }
            let slots: Vec<Slot> = acc
                .into_iter()
                .map(|(weighted, count)| {
                    if count > 0 {
                        Slot {
                            q: weighted / count as f64,
                            visits: count,
                        }
                    } else {
                        Slot::default()
                    }
                })
                .collect();
            master.insert_state(state, slots);
        }

        self.distill_stamp = self.packets.values().map(|p| p.episode_stamp()).max();
        self.distilled = Some(master);
        Ok(self.distilled.as_ref().unwrap())
    }

    /// The latest distilled table. Callers get a read-only view and cannot
    /// mutate repository state through it.
    pub fn fetch(&self) -> Result<&QTable, KnowledgeError> {
        self.distilled.as_ref().ok_or(KnowledgeError::NotDistilled)
    }

    pub fn save(&self, path: &Path, gamma: f64) -> Result<(), KnowledgeError> {
        save_table(self.fetch()?, gamma, path)
    }

    /// Reconstruct a repository (distilled table only) from a knowledge file.
    /// Returns the repository and the file's gamma metadata.
    pub fn load(path: &Path) -> Result<(Self, f64), KnowledgeError> {
        let (table, gamma) = load_table(path)?;
        Ok((Self::from_distilled(table), gamma))
    }
}

/// Render a table in the canonical knowledge format.
pub fn render_knowledge(table: &QTable, gamma: f64) -> String {
    let mut out = String::new();
    let _ = writeln_str(&mut out, KNOWLEDGE_HEADER);
    let _ = writeln_str(&mut out, &format!("actions={}", table.actions()));
    let _ = writeln_str(&mut out, &format!("gamma={gamma}"));
    let _ = writeln_str(&mut out, COLUMNS_LINE);
    for (state, slots) in table.states() {
        for (idx, slot) in slots.iter().enumerate() {
            if slot.visits == 0 && slot.q == 0.0 {
                continue;
            }
            let _ = writeln_str(
                &mut out,
                &format!(
                    "{},{},{},{},{}",
                    state.hour,
                    state.stock,
                    table.actions().get(idx),
                    slot.q,
                    slot.visits
                ),
            );
        }
    }
    out
}

fn writeln_str(out: &mut String, line: &str) -> std::fmt::Result {
    writeln!(out, "{line}")
}

pub fn save_table(table: &QTable, gamma: f64, path: &Path) -> Result<(), KnowledgeError> {
    Ok(fs::write(path, render_knowledge(table, gamma))?)
}

pub fn load_table(path: &Path) -> Result<(QTable, f64), KnowledgeError> {
    parse_knowledge(&fs::read_to_string(path)?)
}

/// Parse the canonical knowledge format, validating strictly: header, sorted
/// distinct action set, exact column line, rows in strictly ascending
/// (hour, stock, action) order with actions drawn from the declared set.
pub fn parse_knowledge(text: &str) -> Result<(QTable, f64), KnowledgeError> {
    if !text.ends_with('\n') {
        let line = text.lines().count().max(1);
        return Err(format_err(line, "file must end with a newline"));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty file"))?;
    check_no_trailing_whitespace(1, header)?;
    if header != KNOWLEDGE_HEADER {
        if header.starts_with("DIRL-KNOWLEDGE") {
            return Err(format_err(1, format!("unknown version: {header:?}")));
        }
        return Err(format_err(
            1,
            format!("malformed header, expected {KNOWLEDGE_HEADER:?}"),
        ));
    }

    let (_, actions_line) = lines
        .next()
        .ok_or_else(|| format_err(2, "missing actions line"))?;
    check_no_trailing_whitespace(2, actions_line)?;
    let actions_csv = actions_line
        .strip_prefix("actions=")
        .ok_or_else(|| format_err(2, "expected actions=<set>"))?;
    let raw_actions: Vec<i64> = actions_csv
        .split(',')
        .map(|f| {
            f.parse::<i64>()
                .map_err(|_| format_err(2, format!("not an integer action: {f:?}")))
        })
        .collect::<Result<_, _>>()?;
    if raw_actions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format_err(2, "action set must be sorted and distinct"));
    }
    let actions = ActionSet::new(raw_actions).map_err(|e| format_err(2, e.to_string()))?;

    let (_, gamma_line) = lines
        .next()
        .ok_or_else(|| format_err(3, "missing gamma line"))?;
    check_no_trailing_whitespace(3, gamma_line)?;
    let gamma: f64 = gamma_line
        .strip_prefix("gamma=")
        .ok_or_else(|| format_err(3, "expected gamma=<decimal>"))?
        .parse()
        .map_err(|_| format_err(3, "gamma is not a decimal"))?;
    if !gamma.is_finite() {
        return Err(format_err(3, "gamma must be finite"));
    }

    let (_, columns) = lines
        .next()
        .ok_or_else(|| format_err(4, "missing columns line"))?;
    check_no_trailing_whitespace(4, columns)?;
    if columns != COLUMNS_LINE {
        return Err(format_err(4, format!("expected {COLUMNS_LINE:?}")));
    }

    let mut table = QTable::new(actions.clone());
    let mut prev_key: Option<(u8, i64, i64)> = None;
    for (lineno, line) in lines {
        check_no_trailing_whitespace(lineno, line)?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format_err(
                lineno,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let hour: u8 = fields[0]
            .parse()
            .map_err(|_| format_err(lineno, format!("bad hour: {:?}", fields[0])))?;
        if hour > 23 {
            return Err(format_err(lineno, format!("hour {hour} out of range 0..=23")));
        }
        let stock: i64 = fields[1]
            .parse()
            .map_err(|_| format_err(lineno, format!("bad stock: {:?}", fields[1])))?;
        let action: i64 = fields[2]
            .parse()
            .map_err(|_| format_err(lineno, format!("bad action: {:?}", fields[2])))?;
        let Some(action_idx) = actions.index_of(action) else {
            return Err(format_err(
                lineno,
                format!("action {action} is not in the declared action set"),
            ));
        };
        let q: f64 = fields[3]
            .parse()
            .map_err(|_| format_err(lineno, format!("bad q value: {:?}", fields[3])))?;
        if !q.is_finite() {
            return Err(format_err(lineno, "q must be finite"));
        }
        let visits: u64 = fields[4]
            .parse()
            .map_err(|_| format_err(lineno, format!("bad count: {:?}", fields[4])))?;

        let key = (hour, stock, action);
        if let Some(prev) = prev_key {
            if key <= prev {
                return Err(format_err(
                    lineno,
                    "rows must be strictly ascending by (hour, stock, action)",
                ));
            }
        }
        prev_key = Some(key);
        table.set_slot(StockState { hour, stock }, action_idx, Slot { q, visits });
    }

    Ok((table, gamma))
}

fn check_no_trailing_whitespace(line: usize, text: &str) -> Result<(), KnowledgeError> {
    if text != text.trim_end() {
        return Err(format_err(line, "trailing whitespace"));
    }
    Ok(())
}
