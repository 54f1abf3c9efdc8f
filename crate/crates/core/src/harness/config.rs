use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::Hyper;
use crate::envs::{EnvKind, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::optimization::{DEFAULT_MULTIPLIER_DELAY, DEFAULT_MULTIPLIER_LR};
use crate::replay::DEFAULT_CAPACITY;
use crate::usl::UslConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Td3,
    RewardShaping,
    SafetyLayer,
    Recovery,
    Lagrangian,
    Fac,
    Usl,
}

impl Algo {
    pub const ALL: [Algo; 7] = [
        Algo::Td3,
        Algo::RewardShaping,
        Algo::SafetyLayer,
        Algo::Recovery,
        Algo::Lagrangian,
        Algo::Fac,
        Algo::Usl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Td3 => "td3",
            Algo::RewardShaping => "reward_shaping",
            Algo::SafetyLayer => "safety_layer",
            Algo::Recovery => "recovery",
            Algo::Lagrangian => "lagrangian",
            Algo::Fac => "fac",
            Algo::Usl => "usl",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algo: Algo,
    pub env: EnvKind,
    pub total_steps: u64,
    pub seed: u64,
    pub horizon: usize,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Uniform-random actions and no updates before this many steps.
    pub start_steps: u64,
    pub replay_capacity: usize,
    pub hyper: Hyper,
    pub cost_limit: f64,
    pub warmup_ratio: f64,
    pub safe_actor_lr: f64,
    pub multiplier_lr: f64,
    pub multiplier_init: f64,
    pub multiplier_delay: u64,
    /// Keep the scalar multiplier at its initial value.
    pub freeze_multiplier: bool,
    pub penalty_factor: f64,
    pub iterative_step: usize,
    pub unroll_eta: f64,
    pub unroll_grad_tol: f64,
    pub shaping_sigma: f64,
}

impl RunConfig {
    pub fn new(algo: Algo, env: EnvKind) -> Self {
        Self {
            algo,
            env,
            total_steps: default_total_steps(env),
            seed: 0,
            horizon: DEFAULT_HORIZON,
            eval_every: 2_000,
            eval_episodes: 10,
            start_steps: 1_000,
            replay_capacity: DEFAULT_CAPACITY,
            hyper: Hyper::default(),
            cost_limit: 0.1,
            warmup_ratio: 0.2,
            safe_actor_lr: 3e-4,
            multiplier_lr: DEFAULT_MULTIPLIER_LR,
            multiplier_init: 0.0,
            multiplier_delay: DEFAULT_MULTIPLIER_DELAY,
            freeze_multiplier: false,
            penalty_factor: 5.0,
            iterative_step: 20,
            unroll_eta: 0.05,
            unroll_grad_tol: 1e-8,
            shaping_sigma: 1.0,
        }
    }

    pub fn usl(&self) -> UslConfig {
        UslConfig {
            kappa: self.penalty_factor,
            delta: self.cost_limit,
            eta: self.unroll_eta,
            k_max: self.iterative_step,
            grad_tol: self.unroll_grad_tol,
        }
    }

    /// Steps before which warm-up-gated safeguards stay inactive.
    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ratio * self.total_steps as f64).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let positive = [
            ("total_steps", self.total_steps as f64),
            ("horizon", self.horizon as f64),
            ("eval_episodes", self.eval_episodes as f64),
            ("replay_capacity", self.replay_capacity as f64),
            ("batch_size", h.batch_size as f64),
            ("policy_delay", h.policy_delay as f64),
            ("multiplier_delay", self.multiplier_delay as f64),
            ("critic_lr", h.critic_lr),
            ("actor_lr", h.actor_lr),
            ("safe_critic_lr", h.cost_critic_lr),
            ("safe_actor_lr", self.safe_actor_lr),
            ("multiplier_lr", self.multiplier_lr),
            ("unroll_eta", self.unroll_eta),
            ("unroll_grad_tol", self.unroll_grad_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("cost_limit", self.cost_limit),
            ("multiplier_init", self.multiplier_init),
            ("penalty_factor", self.penalty_factor),
            ("shaping_sigma", self.shaping_sigma),
            ("exploration_noise", h.expl_sigma),
            ("target_noise", h.smooth_sigma),
            ("target_noise_clip", h.smooth_clip),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("reward_discount", h.gamma_r), ("cost_discount", h.gamma_c)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio)));
        }
        if !(0.0..=1.0).contains(&h.tau) {
            return Err(Error::InvalidConfig(format!("tau must lie in [0, 1], got {}", h.tau)));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`")))
        }
        let h = &mut self.hyper;
        match key {
            "algo" => self.algo = value.parse()?,
            "env" => self.env = value.parse()?,
            "total_steps" => self.total_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "start_steps" => self.start_steps = num(key, value)?,
            "replay_capacity" => self.replay_capacity = num(key, value)?,
            "cost_limit" => self.cost_limit = num(key, value)?,
            "reward_discount" => h.gamma_r = num(key, value)?,
            "cost_discount" => h.gamma_c = num(key, value)?,
            "warmup_ratio" => self.warmup_ratio = num(key, value)?,
            "batch_size" => h.batch_size = num(key, value)?,
            "critic_lr" => h.critic_lr = num(key, value)?,
            "actor_lr" => h.actor_lr = num(key, value)?,
            "safe_critic_lr" => h.cost_critic_lr = num(key, value)?,
            "safe_actor_lr" => self.safe_actor_lr = num(key, value)?,
            "multiplier_lr" => self.multiplier_lr = num(key, value)?,
            "multiplier_init" => self.multiplier_init = num(key, value)?,
            "policy_delay" => h.policy_delay = num(key, value)?,
            "multiplier_delay" => self.multiplier_delay = num(key, value)?,
            "penalty_factor" => self.penalty_factor = num(key, value)?,
            "iterative_step" => self.iterative_step = num(key, value)?,
            "unroll_eta" => self.unroll_eta = num(key, value)?,
            "unroll_grad_tol" => self.unroll_grad_tol = num(key, value)?,
            "shaping_sigma" => self.shaping_sigma = num(key, value)?,
            "freeze_multiplier" => self.freeze_multiplier = num(key, value)?,
            "tau" => h.tau = num(key, value)?,
            "exploration_noise" => h.expl_sigma = num(key, value)?,
            "target_noise" => h.smooth_sigma = num(key, value)?,
            "target_noise_clip" => h.smooth_clip = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }
}

pub fn default_total_steps(env: EnvKind) -> u64 {
    match env {
        EnvKind::Stabilization => 100_000,
        EnvKind::SpeedLimit | EnvKind::HazardWorld => 200_000,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_round_trip() {
        for a in Algo::ALL {
            assert_eq!(a.as_str().parse::<Algo>().unwrap(), a);
        }
        assert!("ppo".parse::<Algo>().is_err());
    }

    #[test]
    fn defaults_follow_hyperparameter_table() {
        let c = RunConfig::new(Algo::Usl, EnvKind::Stabilization);
        assert_eq!(c.cost_limit, 0.1);
        assert_eq!((c.hyper.gamma_r, c.hyper.gamma_c), (0.99, 0.99));
        assert_eq!(c.warmup_ratio, 0.2);
        assert_eq!(c.hyper.batch_size, 256);
        assert_eq!((c.hyper.critic_lr, c.hyper.actor_lr, c.hyper.cost_critic_lr, c.safe_actor_lr), (3e-4, 3e-4, 3e-4, 3e-4));
        assert_eq!((c.multiplier_lr, c.multiplier_init), (1e-5, 0.0));
        assert_eq!((c.hyper.policy_delay, c.multiplier_delay), (2, 12));
        assert_eq!((c.penalty_factor, c.iterative_step), (5.0, 20));
        assert_eq!(c.total_steps, 100_000);
        assert_eq!(RunConfig::new(Algo::Td3, EnvKind::HazardWorld).total_steps, 200_000);
        c.validate().unwrap();
    }

    #[test]
    fn config_text_overrides_and_comments() {
        let mut c = RunConfig::new(Algo::Td3, EnvKind::Stabilization);
        c.apply_text("# sweep base\npenalty_factor = 10  # stronger\n\nalgo = usl\ncost_discount=0.95\n")
            .unwrap();
        assert_eq!((c.penalty_factor, c.algo, c.hyper.gamma_c), (10.0, Algo::Usl, 0.95));
    }

    #[test]
    fn config_text_errors() {
        let mut c = RunConfig::new(Algo::Td3, EnvKind::Stabilization);
        assert!(c.apply_text("no_equals_sign").is_err());
        assert!(c.apply_text("mystery = 1").is_err());
        assert!(c.apply_text("batch_size = lots").is_err());
        assert!(c.apply_text("algo = ppo").is_err());
        assert!(c.apply_text("env = mujoco").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::new(Algo::Td3, EnvKind::Stabilization);
        c.total_steps = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Algo::Td3, EnvKind::Stabilization);
        c.hyper.gamma_c = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Algo::Td3, EnvKind::Stabilization);
        c.multiplier_lr = -1.0;
        assert!(c.validate().is_err());
    }
}
