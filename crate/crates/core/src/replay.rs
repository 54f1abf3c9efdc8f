//! Fixed-capacity FIFO transition store with uniform sampling.

use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_CAPACITY: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// The action actually executed in the environment.
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    /// Bootstrap mask: 1 only for absorbing terminal states.
    pub done: f64,
    pub prev_cost: f64,
    /// Unguarded actor proposal, kept by the recovery algorithm.
    pub task_action: Option<Vec<f64>>,
}

/// Column-major view of sampled transitions; row `i` of every field belongs
/// to the same transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub done: Vec<f64>,
    pub prev_cost: Vec<f64>,
    /// Task proposals; rows without one repeat the executed action.
    pub task_action: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_transitions(items: &[Transition]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBuffer)?;
        let (obs_dim, act_dim) = (first.obs.len(), first.action.len());
        let mut batch = Batch::with_capacity(items.len(), obs_dim, act_dim);
        let any_task = items.iter().any(|t| t.task_action.is_some());
        let mut task = any_task.then(|| Vec::with_capacity(items.len() * act_dim));
        for t in items {
            check_dim("transition obs", obs_dim, t.obs.len())?;
            check_dim("transition action", act_dim, t.action.len())?;
            batch.push_row(t);
            if let Some(task) = task.as_mut() {
                task.extend_from_slice(t.task_action.as_deref().unwrap_or(&t.action));
            }
        }
        batch.task_action = task;
        Ok(batch)
    }

    fn with_capacity(n: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            len: 0,
            obs_dim,
            act_dim,
            obs: Vec::with_capacity(n * obs_dim),
            action: Vec::with_capacity(n * act_dim),
            next_obs: Vec::with_capacity(n * obs_dim),
            reward: Vec::with_capacity(n),
            cost: Vec::with_capacity(n),
            done: Vec::with_capacity(n),
            prev_cost: Vec::with_capacity(n),
            task_action: None,
        }
    }

    fn push_row(&mut self, t: &Transition) {
        self.obs.extend_from_slice(&t.obs);
        self.action.extend_from_slice(&t.action);
        self.next_obs.extend_from_slice(&t.next_obs);
        self.reward.push(t.reward);
        self.cost.push(t.cost);
        self.done.push(t.done);
        self.prev_cost.push(t.prev_cost);
        self.len += 1;
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action_row(&self, i: usize) -> &[f64] {
        &self.action[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `t`, overwriting the oldest transition once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim("transition obs", self.obs_dim, t.obs.len())?;
        check_dim("transition next_obs", self.obs_dim, t.next_obs.len())?;
        check_dim("transition action", self.act_dim, t.action.len())?;
        if let Some(task) = &t.task_action {
            check_dim("transition task_action", self.act_dim, task.len())?;
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Oldest-first iteration over stored transitions.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Indices of `n` uniform draws with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let any_task = idx.iter().any(|&i| self.items[i].task_action.is_some());
        let mut batch = Batch::with_capacity(n, self.obs_dim, self.act_dim);
        let mut task = any_task.then(|| Vec::with_capacity(n * self.act_dim));
        for &i in &idx {
            let t = &self.items[i];
            batch.push_row(t);
            if let Some(task) = task.as_mut() {
                task.extend_from_slice(t.task_action.as_deref().unwrap_or(&t.action));
            }
        }
        batch.task_action = task;
        Ok(batch)
    }
}
