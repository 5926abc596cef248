//! Arbitration history, fairness metrics and priority reallocation policies.
//!
//! Priorities are changed by moving nodes between carrier ranks between
//! rounds; token `t_r` always travels on the same carrier and always means
//! "rank `r`".

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::NodeId;
use crate::protocol::RoundOutcome;

/// Bijection from node id (`1..=k`) to rank (`1..=k`, 1 = highest priority).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Priority(Vec<usize>);

impl Priority {
    pub fn identity(nodes: usize) -> Self {
        Priority((1..=nodes).collect())
    }

    /// `ranks[i]` is the rank of node `i + 1`.
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        let k = ranks.len();
        let mut seen = vec![false; k];
        for &r in &ranks {
            if r == 0 || r > k || std::mem::replace(&mut seen[r - 1], true) {
                return Err(Error::config(format!(
                    "priority {ranks:?} is not a permutation of 1..={k}"
                )));
            }
        }
        Ok(Priority(ranks))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn rank_of(&self, node: NodeId) -> usize {
        self.0[node - 1]
    }

    pub fn holder_of(&self, rank: usize) -> NodeId {
        self.0
            .iter()
            .position(|&r| r == rank)
            .map(|i| i + 1)
            .expect("rank out of range")
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &r)| r == i + 1)
    }
}

impl TryFrom<Vec<usize>> for Priority {
    type Error = Error;

    fn try_from(ranks: Vec<usize>) -> Result<Self> {
        Priority::from_ranks(ranks)
    }
}

impl From<Priority> for Vec<usize> {
    fn from(p: Priority) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Keep the identity permutation.
    Static,
    /// Every node moves up one rank; the top rank wraps to the bottom.
    Rotate,
    /// Longest consecutive wait gets the highest rank; ties keep the current order.
    LongestWaitFirst,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Policy::Static),
            "rotate" => Ok(Policy::Rotate),
            "longest_wait_first" => Ok(Policy::LongestWaitFirst),
            other => Err(Error::config(format!(
                "policy: unknown policy id {other:?} (expected static, rotate or longest_wait_first)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Static => "static",
            Policy::Rotate => "rotate",
            Policy::LongestWaitFirst => "longest_wait_first",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbitrationRecord {
    pub round: usize,
    pub truth_competing: BTreeSet<NodeId>,
    pub winner: Option<NodeId>,
    /// Wait counters after this round, indexed by node id - 1.
    pub waits: Vec<u32>,
    pub priority: Priority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    nodes: usize,
    records: Vec<ArbitrationRecord>,
    waits: Vec<u32>,
    wins: Vec<u32>,
    max_wait: u32,
}

impl History {
    pub fn new(nodes: usize) -> Self {
        History {
            nodes,
            records: Vec::new(),
            waits: vec![0; nodes],
            wins: vec![0; nodes],
            max_wait: 0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn records(&self) -> &[ArbitrationRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn waits(&self) -> &[u32] {
        &self.waits
    }

    pub fn wins(&self) -> &[u32] {
        &self.wins
    }

    /// Priority in force for the most recent round (identity before any round).
    pub fn current_priority(&self) -> Priority {
        self.records
            .last()
            .map(|r| r.priority.clone())
            .unwrap_or_else(|| Priority::identity(self.nodes))
    }

    /// Folds one round into the counters. `priority` is the permutation the
    /// round ran under.
    pub fn record_round(&mut self, outcome: &RoundOutcome, priority: &Priority) {
        for node in 1..=self.nodes {
            let slot = &mut self.waits[node - 1];
            if outcome.winner == Some(node) {
                *slot = 0;
                self.wins[node - 1] += 1;
            } else if outcome.truth_competing.contains(&node) {
                *slot += 1;
            } else {
                *slot = 0;
            }
            self.max_wait = self.max_wait.max(*slot);
        }
        self.records.push(ArbitrationRecord {
            round: self.records.len() + 1,
            truth_competing: outcome.truth_competing.clone(),
            winner: outcome.winner,
            waits: self.waits.clone(),
            priority: priority.clone(),
        });
    }

    /// Priority permutation for the next round.
    pub fn reassign_priorities(&self, policy: Policy) -> Result<Priority> {
        if policy == Policy::Static {
            return Ok(Priority::identity(self.nodes));
        }
        if self.is_empty() {
            return Err(Error::usage(format!(
                "policy {policy} needs at least one recorded round"
            )));
        }
        let current = self.current_priority();
        let k = self.nodes;
        let ranks = match policy {
            Policy::Static => unreachable!(),
            Policy::Rotate => current
                .ranks()
                .iter()
                .map(|&r| if r == 1 { k } else { r - 1 })
                .collect(),
            Policy::LongestWaitFirst => {
                let mut order: Vec<NodeId> = (1..=k).collect();
                order.sort_by(|&a, &b| {
                    self.waits[b - 1]
                        .cmp(&self.waits[a - 1])
                        .then(current.rank_of(a).cmp(&current.rank_of(b)))
                });
                let mut ranks = vec![0; k];
                for (idx, node) in order.into_iter().enumerate() {
                    ranks[node - 1] = idx + 1;
                }
                ranks
            }
        };
        Priority::from_ranks(ranks)
    }

    pub fn fairness_report(&self) -> Result<FairnessReport> {
        if self.is_empty() {
            return Err(Error::usage("fairness report needs at least one round"));
        }
        let rounds = self.records.len();
        let with_winner = self.records.iter().filter(|r| r.winner.is_some()).count();
        Ok(FairnessReport {
            rounds,
            rounds_with_winner: with_winner,
            wins: self.wins.clone(),
            win_share: self
                .wins
                .iter()
                .map(|&w| w as f64 / rounds as f64)
                .collect(),
            max_wait: self.max_wait,
            jain_index: jain_index(&self.wins),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub rounds: usize,
    pub rounds_with_winner: usize,
    pub wins: Vec<u32>,
    pub win_share: Vec<f64>,
    pub max_wait: u32,
    pub jain_index: f64,
}

/// Jain's index `(Σx)² / (n·Σx²)`; 1.0 when every count is zero.
pub fn jain_index(counts: &[u32]) -> f64 {
    let sum: f64 = counts.iter().map(|&c| c as f64).sum();
    let sq: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
    if sq == 0.0 {
        1.0
    } else {
        sum * sum / (counts.len() as f64 * sq)
    }
}
