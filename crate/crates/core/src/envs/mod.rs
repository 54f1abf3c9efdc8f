//! Constrained-MDP environments with binary cost signals.
//!
//! Each concrete task only knows its physics. [`Env`] adds the episode
//! bookkeeping shared by all of them: action clamping, the horizon, the
//! finished-episode contract, and the previous-step cost used by the safety
//! layer's linear cost model.

pub mod hazardworld;
pub mod speedlimit;
pub mod stabilization;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use hazardworld::HazardWorld;
pub use speedlimit::SpeedLimit;
pub use stabilization::Stabilization;

pub const DEFAULT_HORIZON: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    /// Exactly 0.0 or 1.0.
    pub cost: f64,
    /// Episode over (terminal state or horizon reached).
    pub done: bool,
    /// The episode ended in an absorbing state; horizon truncation is not
    /// terminal and must still bootstrap.
    pub terminal: bool,
}

/// Per-tick outcome reported by a task's physics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub unsafe_transition: bool,
    pub terminal: bool,
}

pub trait Task: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng);
    fn observe(&self) -> Vec<f64>;
    /// Advances one tick with an action already clamped to the unit box.
    fn advance(&mut self, action: &[f64]) -> Outcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Stabilization,
    SpeedLimit,
    HazardWorld,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::Stabilization,
        EnvKind::SpeedLimit,
        EnvKind::HazardWorld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Stabilization => "stabilization",
            EnvKind::SpeedLimit => "speedlimit",
            EnvKind::HazardWorld => "hazardworld",
        }
    }

    pub fn make(self, horizon: usize) -> Env {
        let task: Box<dyn Task> = match self {
            EnvKind::Stabilization => Box::new(Stabilization::default()),
            EnvKind::SpeedLimit => Box::new(SpeedLimit::default()),
            EnvKind::HazardWorld => Box::new(HazardWorld::default()),
        };
        Env::new(task, horizon)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown environment `{s}`")))
    }
}

pub struct Env {
    task: Box<dyn Task>,
    horizon: usize,
    steps: usize,
    finished: bool,
    prev_cost: f64,
}

impl Env {
    pub fn new(task: Box<dyn Task>, horizon: usize) -> Self {
        assert!(horizon > 0, "horizon must be positive");
        Self {
            task,
            horizon,
            steps: 0,
            // A fresh environment must be reset before stepping.
            finished: true,
            prev_cost: 0.0,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: self.task.name().to_string(),
            obs_dim: self.task.obs_dim(),
            act_dim: self.task.act_dim(),
            horizon: self.horizon,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.task.reset(&mut rng);
        self.steps = 0;
        self.finished = false;
        self.prev_cost = 0.0;
        self.task.observe()
    }

    /// Cost of the previous transition in this episode (0 at episode start).
    pub fn prev_cost(&self) -> f64 {
        self.prev_cost
    }

    pub fn elapsed(&self) -> usize {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn task(&self) -> &dyn Task {
        self.task.as_ref()
    }

    pub fn task_mut(&mut self) -> &mut dyn Task {
        self.task.as_mut()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_dim("action", self.task.act_dim(), action.len())?;
        let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let outcome = self.task.advance(&clamped);
        self.steps += 1;
        let cost = if outcome.unsafe_transition { 1.0 } else { 0.0 };
        self.prev_cost = cost;
        let done = outcome.terminal || self.steps >= self.horizon;
        self.finished = done;
        Ok(StepResult {
            next_obs: self.task.observe(),
            reward: outcome.reward,
            cost,
            done,
            terminal: outcome.terminal,
        })
    }
}
