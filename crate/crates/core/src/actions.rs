//! The shared action vocabulary: how many bikes an agent may move in one hour.
//!
//! Positive actions add bikes to the station (from the depot), negative actions
//! remove them. Every component that scores or compares actions goes through
//! [`ActionSet`] so that tie-breaking stays identical everywhere.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionSetError {
    #[error("action set is empty")]
    Empty,
    #[error("action set must contain 0 (the do-nothing action)")]
    MissingZero,
    #[error("action set contains duplicate entry {0}")]
    Duplicate(i64),
}

/// Sorted, distinct set of signed per-hour bike moves. Always contains 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    actions: Vec<i64>,
}

impl ActionSet {
    pub fn new(mut actions: Vec<i64>) -> Result<Self, ActionSetError> {
        if actions.is_empty() {
            return Err(ActionSetError::Empty);
        }
        actions.sort_unstable();
        if let Some(w) = actions.windows(2).find(|w| w[0] == w[1]) {
            return Err(ActionSetError::Duplicate(w[0]));
        }
        if !actions.contains(&0) {
            return Err(ActionSetError::MissingZero);
        }
        Ok(Self { actions })
    }

    /// The 11-action set used by the reference experiments.
    pub fn default_set() -> Self {
        Self::new(vec![-30, -20, -10, -3, -1, 0, 1, 3, 10, 20, 30]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, action: i64) -> bool {
        self.actions.binary_search(&action).is_ok()
    }

    /// Slot index of `action`, or None when it is not a member.
    pub fn index_of(&self, action: i64) -> Option<usize> {
        self.actions.binary_search(&action).ok()
    }

    pub fn get(&self, index: usize) -> i64 {
        self.actions[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.actions.iter().copied()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.actions
    }

    /// Largest |action| in the set.
    pub fn max_magnitude(&self) -> i64 {
        self.actions.iter().map(|a| a.abs()).max().unwrap_or(0)
    }
}

impl fmt::Display for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for a in &self.actions {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
            first = false;
        }
        Ok(())
    }
}

/// Picks the best (action, value) pair under the canonical ordering:
/// highest value, then smallest |action|, then the negative action before
/// the positive one of equal magnitude.
///
/// Both greedy action selection and the planning oracle use this, so learned
/// policies and optimal policies resolve ties the same way.
pub fn argmax_action<I>(candidates: I) -> Option<(i64, f64)>
where
    I: IntoIterator<Item = (i64, f64)>,
{
    let mut best: Option<(i64, f64)> = None;
    for (action, value) in candidates {
        best = match best {
            None => Some((action, value)),
            Some((ba, bv)) => {
                if prefer(action, value, ba, bv) {
                    Some((action, value))
                } else {
                    Some((ba, bv))
                }
            }
        };
    }
    best
}

fn prefer(a: i64, qa: f64, b: i64, qb: f64) -> bool {
    match qa.total_cmp(&qb) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (a.abs(), a) < (b.abs(), b),
    }
}
