//! Recovery RL: a risk critic trained with the cost-truncated recursion
//! `Q_risk(s, a) = c + (1 - c) γ Q_risk(s', a')`, a recovery actor that
//! descends it, and a gate that hands control to the recovery actor when the
//! task proposal looks too risky.

use serde::{Deserialize, Serialize};

use crate::approximator::{Adam, Mlp, MlpSpec, OutputActivation};
use crate::backbone::{concat_rows, q_values, take_columns, Tracked};
use crate::error::Result;
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPair {
    pub q_risk: Tracked,
    pub pi_risk: Mlp,
    pub pi_opt: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskLosses {
    pub q_risk: f64,
    /// Mean `Q_risk(s, π_risk(s))` before the recovery-actor step.
    pub pi_risk: f64,
}

impl RiskPair {
    pub fn new(obs_dim: usize, act_dim: usize, seed: u64, critic_lr: f64, actor_lr: f64) -> Result<Self> {
        let q_spec = MlpSpec::two_hidden(obs_dim + act_dim, 1, OutputActivation::Identity)?;
        let pi_spec = MlpSpec::two_hidden(obs_dim, act_dim, OutputActivation::Tanh)?;
        let q_risk = Tracked::new(q_spec, seed.wrapping_mul(2).wrapping_add(1), critic_lr)?;
        let pi_risk = Mlp::new(pi_spec, seed.wrapping_mul(2).wrapping_add(2))?;
        let pi_opt = Adam::new(pi_risk.params().len(), actor_lr);
        Ok(Self { q_risk, pi_risk, pi_opt })
    }

    pub fn obs_dim(&self) -> usize {
        self.pi_risk.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.pi_risk.output_dim()
    }

    pub fn risk(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        Ok(self.q_risk.net.forward(&x)?[0])
    }

    pub fn recovery_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.pi_risk.forward(obs)
    }

    /// Task action when `Q_risk(s, a_task) ≤ δ`, recovery action otherwise.
    /// The flag reports whether recovery took over.
    pub fn gate(&self, obs: &[f64], task_action: &[f64], delta: f64) -> Result<(Vec<f64>, bool)> {
        if self.risk(obs, task_action)? <= delta {
            Ok((task_action.to_vec(), false))
        } else {
            Ok((self.recovery_action(obs)?, true))
        }
    }

    /// Batched successor actions of the composite policy at `next_obs`.
    fn composite_actions(&self, task_actor: &Mlp, next_obs: &[f64], n: usize, delta: f64, gate_active: bool) -> Result<Vec<f64>> {
        let (obs_dim, act_dim) = (self.obs_dim(), self.act_dim());
        let mut actions = task_actor.forward_batch(next_obs, n)?.into_output();
        if !gate_active {
            return Ok(actions);
        }
        let risk = q_values(&self.q_risk.net, next_obs, obs_dim, &actions, act_dim)?;
        if risk.iter().any(|&r| r > delta) {
            let recovery = self.pi_risk.forward_batch(next_obs, n)?.into_output();
            for (i, &r) in risk.iter().enumerate() {
                if r > delta {
                    let row = i * act_dim..(i + 1) * act_dim;
                    actions[row.clone()].copy_from_slice(&recovery[row]);
                }
            }
        }
        Ok(actions)
    }

    /// `y = c + (1 - c) γ clamp(Q'_risk(s', a'), 0, 1)`, with `a'` drawn from
    /// the gated composite policy.
    pub fn risk_target(&self, batch: &Batch, task_actor: &Mlp, gamma: f64, delta: f64, gate_active: bool) -> Result<Vec<f64>> {
        let n = batch.len;
        let next_act = self.composite_actions(task_actor, &batch.next_obs, n, delta, gate_active)?;
        let q = q_values(&self.q_risk.target, &batch.next_obs, self.obs_dim(), &next_act, self.act_dim())?;
        Ok((0..n)
            .map(|i| {
                let c = batch.cost[i];
                c + (1.0 - c) * gamma * q[i].clamp(0.0, 1.0)
            })
            .collect())
    }

    /// Regresses `Q_risk` on executed actions, then takes one descent step
    /// for `π_risk` on `mean Q_risk(s, π_risk(s))` and tracks the target.
    pub fn update(
        &mut self,
        batch: &Batch,
        task_actor: &Mlp,
        gamma: f64,
        delta: f64,
        gate_active: bool,
        tau: f64,
    ) -> Result<RiskLosses> {
        let y = self.risk_target(batch, task_actor, gamma, delta, gate_active)?;
        let x = concat_rows(&batch.obs, self.obs_dim(), &batch.action, self.act_dim());
        let q_loss = self.q_risk.regress(&x, &y)?;
        let pi_loss = self.recovery_step(&batch.obs)?;
        self.q_risk.soft_update(tau)?;
        Ok(RiskLosses {
            q_risk: q_loss,
            pi_risk: pi_loss,
        })
    }

    /// One Adam step of `π_risk` against the current risk critic.
    pub fn recovery_step(&mut self, obs: &[f64]) -> Result<f64> {
        let (obs_dim, act_dim) = (self.obs_dim(), self.act_dim());
        let n = obs.len() / obs_dim;
        let tape = self.pi_risk.forward_batch(obs, n)?;
        let x = concat_rows(obs, obs_dim, tape.output(), act_dim);
        let q_tape = self.q_risk.net.forward_batch(&x, n)?;
        let mean = q_tape.output().iter().sum::<f64>() / n as f64;
        let upstream = vec![1.0 / n as f64; n];
        let dx = self.q_risk.net.backward(&q_tape, &upstream, None, true)?.unwrap();
        let grad_a = take_columns(&dx, obs_dim + act_dim, obs_dim, act_dim);
        let mut grad = vec![0.0; self.pi_risk.params().len()];
        self.pi_risk.backward(&tape, &grad_a, Some(&mut grad), false)?;
        self.pi_opt.step(self.pi_risk.params_mut(), &grad)?;
        Ok(mean)
    }
}
