//! Tabular Q-learning machinery shared by every algorithm: Q-tables, the
//! update rule, epsilon-greedy selection, and cooperative selection over
//! summed shared rows with message accounting.

use crate::error::{Error, Result};
use rand::Rng;

/// Learning-rate, discount, and exploration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    /// Learning rate, in (0, 1].
    pub alpha: f64,
    /// Discount factor, in [0, 1). Strictly below 1 keeps Q bounded under
    /// bounded rewards.
    pub gamma: f64,
    /// Exploration probability, in [0, 1].
    pub epsilon: f64,
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in [0,1), got {}", self.gamma)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must be in [0,1], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Dense states x actions value table. Fresh tables are all-zero and every
/// stored entry stays finite.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    states: usize,
    actions: usize,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        assert!(states > 0 && actions > 0, "Q-table dimensions must be positive");
        Self {
            values: vec![0.0; states * actions],
            states,
            actions,
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[self.index(state, action)]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        assert!(value.is_finite(), "Q-values must be finite");
        let i = self.index(state, action);
        self.values[i] = value;
    }

    /// The row of Q-values for one state.
    pub fn row(&self, state: usize) -> &[f64] {
        assert!(state < self.states, "state index out of range");
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    fn index(&self, state: usize, action: usize) -> usize {
        assert!(state < self.states, "state index out of range");
        assert!(action < self.actions, "action index out of range");
        state * self.actions + action
    }

    /// One-step Q-learning update:
    /// `Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a'))`.
    /// Touches exactly the `(state, action)` entry.
    pub fn update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        params: &LearningParams,
    ) {
        assert!(reward.is_finite(), "reward must be finite");
        let max_next = max_of(self.row(next_state));
        let i = self.index(state, action);
        let updated =
            (1.0 - params.alpha) * self.values[i] + params.alpha * (reward + params.gamma * max_next);
        assert!(updated.is_finite(), "Q-update produced a non-finite value");
        self.values[i] = updated;
    }
}

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry, ties broken by the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    assert!(!row.is_empty(), "argmax of an empty row");
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action selection: a uniformly random action with
/// probability `epsilon`, otherwise the greedy argmax of the state's row.
pub fn select_egreedy<R: Rng>(
    table: &QTable,
    state: usize,
    params: &LearningParams,
    rng: &mut R,
) -> usize {
    if rng.gen::<f64>() < params.epsilon {
        rng.gen_range(0..table.action_count())
    } else {
        argmax_lowest(table.row(state))
    }
}

/// One agent's contribution to a cooperative sharing round: the row of its
/// Q-table corresponding to its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedRow {
    pub sender: usize,
    pub state: usize,
    pub row: Vec<f64>,
}

/// Cooperative selection: argmax over the element-wise sum of all shared
/// rows, with per-agent epsilon exploration applied after the sum. Agents
/// holding identical row sets that both exploit pick the same action.
pub fn select_cooperative<R: Rng>(
    rows: &[SharedRow],
    params: &LearningParams,
    rng: &mut R,
) -> Result<usize> {
    let summed = sum_rows(rows)?;
    if rng.gen::<f64>() < params.epsilon {
        Ok(rng.gen_range(0..summed.len()))
    } else {
        Ok(argmax_lowest(&summed))
    }
}

/// Element-wise sum of shared rows in sender order.
pub fn sum_rows(rows: &[SharedRow]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Config("cooperative selection needs at least one row".into()))?;
    let len = first.row.len();
    if rows.iter().any(|r| r.row.len() != len) {
        return Err(Error::Config("shared rows have mismatched lengths".into()));
    }
    let mut summed = vec![0.0; len];
    for r in rows {
        for (acc, v) in summed.iter_mut().zip(&r.row) {
            *acc += v;
        }
    }
    Ok(summed)
}

/// One sharing round among cooperating agents.
///
/// `per_task[t]` lists, for every agent in a fixed order, its Q-table for
/// task `t` and its current state in that task. Every agent receives every
/// other agent's current-state row for every task; the exchange costs
/// exactly `n_agents * (n_agents - 1)` messages per round regardless of the
/// task count (one message per ordered agent pair).
pub fn broadcast_rows(
    per_task: &[Vec<(&QTable, usize)>],
) -> Result<(Vec<Vec<SharedRow>>, u64)> {
    let n_agents = per_task
        .first()
        .ok_or_else(|| Error::Config("broadcast needs at least one task".into()))?
        .len();
    if n_agents == 0 {
        return Err(Error::Config("broadcast needs at least one agent".into()));
    }
    let mut shared = Vec::with_capacity(per_task.len());
    for task in per_task {
        if task.len() != n_agents {
            return Err(Error::Config("tasks disagree on the agent count".into()));
        }
        let actions = task[0].0.action_count();
        let mut rows = Vec::with_capacity(n_agents);
        for (sender, (table, state)) in task.iter().enumerate() {
            if table.action_count() != actions {
                return Err(Error::Config(
                    "cooperating Q-tables have mismatched action counts".into(),
                ));
            }
            rows.push(SharedRow {
                sender,
                state: *state,
                row: table.row(*state).to_vec(),
            });
        }
        shared.push(rows);
    }
    let messages = (n_agents as u64) * (n_agents as u64 - 1);
    Ok((shared, messages))
}

/// How a docitive newcomer combines the donors' Q-tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeRule {
    /// Element-wise arithmetic mean over all donors (default).
    Mean,
    /// Copy the first donor's table verbatim.
    First,
    /// Element-wise maximum over all donors.
    Max,
}

/// Initial Q-table for a newly deployed agent: all-zero when no donors
/// exist (learning from scratch), otherwise the donors' tables combined
/// under `rule`.
pub fn docitive_init(
    states: usize,
    actions: usize,
    donors: &[&QTable],
    rule: MergeRule,
) -> Result<QTable> {
    if donors
        .iter()
        .any(|t| t.state_count() != states || t.action_count() != actions)
    {
        return Err(Error::Config("donor Q-tables have mismatched shapes".into()));
    }
    let mut table = QTable::zeros(states, actions);
    if donors.is_empty() {
        return Ok(table);
    }
    match rule {
        MergeRule::Mean => {
            let scale = 1.0 / donors.len() as f64;
            for s in 0..states {
                for a in 0..actions {
                    let sum: f64 = donors.iter().map(|t| t.get(s, a)).sum();
                    table.set(s, a, sum * scale);
                }
            }
        }
        MergeRule::First => {
            table = donors[0].clone();
        }
        MergeRule::Max => {
            for s in 0..states {
                for a in 0..actions {
                    let m = donors
                        .iter()
                        .map(|t| t.get(s, a))
                        .fold(f64::NEG_INFINITY, f64::max);
                    table.set(s, a, m);
                }
            }
        }
    }
    Ok(table)
}
